#include <random>

#include <gtest/gtest.h>

#include "collabvn/vn.hpp"
#include "test_support.hpp"

namespace collabvn {
namespace {

using testing::random_grid;
using testing::random_params;
using testing::random_sample;

VnArchitecture small_arch(int steps = 3) {
  VnArchitecture a;
  a.steps = steps;
  a.levels = 2;
  a.filters = 4;
  a.ksize = 3;
  return a;
}

TEST(VnArchitecture, Name) {
  VnArchitecture a;
  a.steps = 7;
  a.ksize = 5;
  a.levels = 4;
  EXPECT_EQ(a.name(), "VN^{7,5}_4");
  a.ksize = 11;
  EXPECT_EQ(a.name(), "VN^{7,11}_4");
}

TEST(VnArchitecture, RejectsEvenKernel) {
  auto a = small_arch();
  a.ksize = 4;
  EXPECT_THROW(a.validate(), ConfigError);
  a = small_arch();
  a.steps = 0;
  EXPECT_THROW(a.validate(), ConfigError);
}

TEST(InitState, ChannelsFromInputs) {
  std::mt19937_64 rng(1);
  auto s = random_sample<double>(rng, 4, 6, 11);
  for (double& v : s.inputs.confidence.data()) v = 1.0;
  for (double& v : s.inputs.disparity.data()) v = 0.0;
  const auto u = init_state(s.inputs);
  ASSERT_EQ(u.channels(), 5);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int c = 0; c < 3; ++c) EXPECT_EQ(u.at(y, x, c), s.inputs.image.at(y, x, c));
      EXPECT_EQ(u.at(y, x, channel::kDisparity), 0.0);
      EXPECT_EQ(u.at(y, x, channel::kConfidence), 1.0);
    }
  }
}

TEST(InitState, NormalisesDisparity) {
  std::mt19937_64 rng(2);
  const auto s = random_sample<double>(rng, 3, 3, 21);
  const auto u = init_state(s.inputs);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_DOUBLE_EQ(u.at(y, x, channel::kDisparity), s.inputs.disparity.at(y, x) / 20.0);
}

TEST(VnStep, ZeroStepSizeIsIdentity) {
  std::mt19937_64 rng(3);
  const auto s = random_sample<double>(rng, 8, 8, 16);
  auto p = random_params(rng, small_arch(1));
  p.steps[0].alpha = 0.0;
  const auto u0 = init_state(s.inputs);
  const auto anchors = DataAnchors<double>::from_state(u0);
  auto u = u0;
  for (double& v : u.data()) v += 0.05;
  EXPECT_EQ(vn_step(u, anchors, p.steps[0], DisparityWeight::kLaggedIterate), u);
}

TEST(VnStep, ZeroParamsAreIdentity) {
  std::mt19937_64 rng(4);
  const auto s = random_sample<double>(rng, 8, 8, 16);
  const auto p = make_zero_params(small_arch(1));
  const auto u0 = init_state(s.inputs);
  auto u = random_grid<double>(rng, 8, 8, 5);
  EXPECT_EQ(vn_step(u, DataAnchors<double>::from_state(u0), p.steps[0], DisparityWeight::kLaggedIterate), u);
}

TEST(VnStep, ZeroRbfAndDataWeightsAreIdentity) {
  std::mt19937_64 rng(5);
  auto p = random_params(rng, small_arch(1));
  for (auto& lv : p.steps[0].regularizer.levels) {
    std::fill(lv.activation.weights.begin(), lv.activation.weights.end(), 0.0);
  }
  p.steps[0].data = DataWeights{};
  const auto u = random_grid<double>(rng, 7, 9, 5);
  EXPECT_EQ(vn_step(u, DataAnchors<double>::from_state(random_grid<double>(rng, 7, 9, 5)), p.steps[0],
                    DisparityWeight::kLaggedIterate),
            u);
}

TEST(VnStep, DecreasesEnergyForSmallSteps) {
  std::mt19937_64 rng(6);
  VnParams p = make_initial_params(small_arch(1), 17);
  auto& step = p.steps[0];
  step.alpha = 0.9 / foe_lipschitz(step.regularizer, 10, 10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto u0 = random_grid<double>(rng, 10, 10, 5, 0.0, 1.0);
    const auto anchors = DataAnchors<double>::from_state(u0);
    const auto u = random_grid<double>(rng, 10, 10, 5, 0.0, 1.0);
    const auto mode = DisparityWeight::kInputConfidence;
    const double before = foe_energy(u, step.regularizer) + data_energy(u, anchors, step.data, mode);
    const auto next = vn_step(u, anchors, step, mode);
    const double after = foe_energy(next, step.regularizer) + data_energy(next, anchors, step.data, mode);
    EXPECT_LT(after, before);
  }
}

TEST(VnForward, ZeroParamsKeepInitialState) {
  std::mt19937_64 rng(7);
  const auto s = random_sample<double>(rng, 9, 7, 16);
  const auto u0 = init_state(s.inputs);
  const auto r = vn_forward(u0, make_zero_params(small_arch(4)), true);
  EXPECT_EQ(r.output, u0);
  ASSERT_EQ(r.trajectory.size(), 5u);
  for (const auto& u : r.trajectory) EXPECT_EQ(u, u0);
}

TEST(VnForward, SingleStepMatchesVnStep) {
  std::mt19937_64 rng(8);
  const auto s = random_sample<double>(rng, 9, 9, 16);
  const auto p = random_params(rng, small_arch(1));
  const auto u0 = init_state(s.inputs);
  const auto r = vn_forward(u0, p);
  EXPECT_EQ(r.output, vn_step(u0, DataAnchors<double>::from_state(u0), p.steps[0], p.arch.weight_mode));
  EXPECT_TRUE(r.trajectory.empty());
}

TEST(VnForward, FloatTracksDouble) {
  std::mt19937_64 rng(9);
  const auto s = random_sample<double>(rng, 12, 12, 16);
  const auto p = random_params(rng, small_arch(3));
  const auto u0 = init_state(s.inputs);
  const auto rd = vn_forward(u0, p).output;
  const auto rf = vn_forward(u0.cast<float>(), p).output;
  for (std::size_t i = 0; i < rd.size(); ++i) EXPECT_NEAR(rf.data()[i], rd.data()[i], 1e-4);
}

TEST(Extract, Disparity) {
  CollabState<double> u(1, 4, 5, 0.0);
  u.at(0, 1, channel::kDisparity) = 1.0;
  u.at(0, 2, channel::kDisparity) = 0.5;
  u.at(0, 3, channel::kDisparity) = 1.7;
  const auto d128 = extract_disparity(u, 128);
  EXPECT_EQ(d128.at(0, 0), 0.0);
  EXPECT_EQ(d128.at(0, 1), 127.0);
  EXPECT_EQ(d128.at(0, 3), 127.0);
  EXPECT_EQ(extract_disparity(u, 101).at(0, 2), 50.0);
  u.at(0, 0, channel::kDisparity) = -0.2;
  EXPECT_EQ(extract_disparity(u, 101).at(0, 0), 0.0);
}

TEST(Extract, ConfidenceClamped) {
  CollabState<double> u(1, 3, 5, 0.0);
  u.at(0, 0, channel::kConfidence) = -0.5;
  u.at(0, 1, channel::kConfidence) = 0.25;
  u.at(0, 2, channel::kConfidence) = 1.5;
  const auto c = extract_confidence(u);
  EXPECT_EQ(c.at(0, 0), 0.0);
  EXPECT_EQ(c.at(0, 1), 0.25);
  EXPECT_EQ(c.at(0, 2), 1.0);
}

TEST(Params, InitialParamsAreFeasibleAndSeeded) {
  const auto a = make_initial_params(small_arch(2), 3);
  const auto b = make_initial_params(small_arch(2), 3);
  const auto c = make_initial_params(small_arch(2), 4);
  EXPECT_NO_THROW(a.validate());
  const auto& fa = a.steps[0].regularizer.levels[0].filters.taps();
  const auto& fb = b.steps[0].regularizer.levels[0].filters.taps();
  const auto& fc = c.steps[0].regularizer.levels[0].filters.taps();
  EXPECT_TRUE(std::equal(fa.begin(), fa.end(), fb.begin()));
  EXPECT_FALSE(std::equal(fa.begin(), fa.end(), fc.begin()));
  for (const auto& st : a.steps) {
    for (const auto& lv : st.regularizer.levels) {
      for (int k = 0; k < lv.filters.filters(); ++k) {
        double sum = 0, sq = 0;
        for (double t : lv.filters.kernel(k)) {
          sum += t;
          sq += t * t;
        }
        EXPECT_NEAR(sum, 0.0, 1e-12);
        EXPECT_LE(sq, 1.0 + 1e-12);
      }
    }
  }
}

TEST(Params, InitialActivationIsIdentityLine) {
  const auto p = make_initial_params(small_arch(1), 1);
  const auto& act = p.steps[0].regularizer.levels[0].activation;
  for (double s = -2.0; s <= 2.0; s += 0.25) EXPECT_NEAR(rbf_eval(act, 0, s), s, 3e-3);
}

}  // namespace
}  // namespace collabvn
