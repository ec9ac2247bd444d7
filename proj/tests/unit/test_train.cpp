#include <cmath>

#include <gtest/gtest.h>

#include "collabvn/train.hpp"
#include "test_support.hpp"

namespace collabvn {
namespace {

using testing::backward_fd_errors;
using testing::kink_margin;
using testing::random_grid;
using testing::random_params;
using testing::random_sample;

VnArchitecture small_arch(DisparityWeight mode) {
  VnArchitecture a;
  a.steps = 2;
  a.levels = 2;
  a.filters = 4;
  a.ksize = 3;
  a.weight_mode = mode;
  return a;
}

void expect_backward_matches(DisparityWeight mode, double tau) {
  std::mt19937_64 rng(11);
  for (int draw = 0; draw < 2; ++draw) {
    TrainSample<double> s;
    VnParams p;
    do {
      s = random_sample<double>(rng, 9, 9, 16);
      p = random_params(rng, small_arch(mode));
    } while (kink_margin(s, p, 1.0, tau) < 1e-4);
    for (const auto& e : backward_fd_errors(s, p, 1.0, tau)) {
      EXPECT_LE(e.error, 1e-4) << e.name;
    }
  }
}

TEST(VnBackward, MatchesFiniteDifferencesLaggedWeight) { expect_backward_matches(DisparityWeight::kLaggedIterate, 3.0); }

TEST(VnBackward, MatchesFiniteDifferencesInputWeight) {
  expect_backward_matches(DisparityWeight::kInputConfidence, kNoTruncation);
}

TEST(Huber, Values) {
  EXPECT_EQ(huber(0.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(2.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(huber(-2.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(huber_derivative(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(huber_derivative(-3.0, 1.0), -1.0);
}

TEST(TruncatedHuber, Examples) {
  Grid<double> pred(1, 1, 1, 10.0), gt(1, 1, 1, 0.0);
  const Mask valid(1, 1, 1, 1);
  EXPECT_EQ(truncated_huber_loss(gt, gt, valid, 1.0, 3.0), 0.0);
  Grid<double> grad;
  EXPECT_DOUBLE_EQ(truncated_huber_loss(pred, gt, valid, 1.0, 3.0, &grad), 3.0);
  EXPECT_EQ(grad.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(truncated_huber_loss(pred, gt, valid, 1.0, kNoTruncation, &grad), 9.5);
  EXPECT_EQ(grad.at(0, 0), 1.0);
}

TEST(TruncatedHuber, UntruncatedIsPlainSumOverValidPixels) {
  std::mt19937_64 rng(2);
  const auto pred = random_grid<double>(rng, 5, 6, 1, -4, 4);
  const auto gt = random_grid<double>(rng, 5, 6, 1, -4, 4);
  Mask valid(5, 6, 1, 1);
  valid.at(1, 1) = 0;
  valid.at(3, 4) = 0;
  double sum = 0;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x)
      if (valid.at(y, x)) sum += huber(pred.at(y, x) - gt.at(y, x), 1.0);
  Grid<double> grad;
  EXPECT_NEAR(truncated_huber_loss(pred, gt, valid, 1.0, kNoTruncation, &grad), sum, 1e-12);
  EXPECT_EQ(grad.at(1, 1), 0.0);
  EXPECT_EQ(grad.at(3, 4), 0.0);
}

TEST(TruncatedHuber, RejectsBadArguments) {
  Grid<double> a(2, 2, 1);
  const Mask valid(2, 2, 1, 1);
  EXPECT_THROW(truncated_huber_loss(a, a, valid, 0.0, 1.0), ConfigError);
  EXPECT_THROW(truncated_huber_loss(a, Grid<double>(2, 3, 1), valid, 1.0, 1.0), ConfigError);
}

TEST(VnBackward, ZeroLossGradientGivesZeroBundle) {
  std::mt19937_64 rng(3);
  const auto s = random_sample<double>(rng, 8, 8, 16);
  const auto p = random_params(rng, small_arch(DisparityWeight::kLaggedIterate));
  const auto r = vn_forward(init_state(s.inputs), p, true);
  const auto g = vn_backward(r.trajectory, p, Grid<double>(8, 8, 1));
  for (const auto& b : parameter_blocks(g.values))
    for (double v : b.values) EXPECT_EQ(v, 0.0) << b.name;
}

TEST(ParameterBlocks, Layout) {
  const auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 1);
  const auto blocks = parameter_blocks(p);
  ASSERT_EQ(blocks.size(), 2u * (2 * 3 + 4));
  EXPECT_EQ(blocks[0].dims, (std::vector<std::uint32_t>{4, 5, 3, 3}));
  EXPECT_EQ(blocks[1].dims, (std::vector<std::uint32_t>{4, 63}));
  EXPECT_EQ(blocks[2].dims, (std::vector<std::uint32_t>{4}));
}

TEST(Projection, FeasibleParamsUnchanged) {
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 2);
  project_theta(p);
  const auto before = p;
  project_theta(p);
  // Re-centring an already zero-mean kernel can move taps by an ulp.
  const auto a = parameter_blocks(before);
  const auto b = parameter_blocks(p);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].values.size(); ++j) EXPECT_NEAR(a[i].values[j], b[i].values[j], 1e-15);
}

TEST(Projection, Kernels) {
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 3);
  auto& bank = p.steps[0].regularizer.levels[0].filters;
  auto k0 = bank.kernel(0);
  std::fill(k0.begin(), k0.end(), 0.7);
  auto k1 = bank.kernel(1);
  std::fill(k1.begin(), k1.end(), 0.0);
  k1[0] = std::sqrt(2.0);
  k1[1] = -std::sqrt(2.0);
  project_theta(p);
  for (double t : bank.kernel(0)) EXPECT_NEAR(t, 0.0, 1e-15);
  EXPECT_NEAR(bank.kernel(1)[0], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(bank.kernel(1)[1], -std::sqrt(0.5), 1e-15);
  for (std::size_t i = 2; i < k1.size(); ++i) EXPECT_EQ(bank.kernel(1)[i], 0.0);
}

TEST(Projection, RbfRowsScalarsAndStep) {
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 4);
  auto row = p.steps[1].regularizer.levels[1].activation.row(2);
  for (double& v : row) v = 1.0;
  p.steps[1].data.lambda = -1.0;
  p.steps[1].data.nu = -0.5;
  p.steps[1].alpha = -3.0;
  p.steps[1].regularizer.levels[0].activation.beta[0] = -2.0;
  project_theta(p);
  double n = 0;
  for (double v : row) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_EQ(p.steps[1].data.lambda, 0.0);
  EXPECT_EQ(p.steps[1].data.nu, 0.0);
  EXPECT_EQ(p.steps[1].alpha, kMinStepSize);
  EXPECT_EQ(p.steps[1].regularizer.levels[0].activation.beta[0], -2.0);
}

TEST(Adam, ZeroGradientLeavesFeasibleParams) {
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 5);
  project_theta(p);
  const auto before = p;
  AdamState st;
  for (int i = 0; i < 3; ++i) projected_block_adam(p, GradientBundle::zeros_like(p), st, AdamConfig{});
  EXPECT_EQ(st.step, 3);
  const auto a = parameter_blocks(before);
  const auto b = parameter_blocks(p);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].values.size(); ++j) EXPECT_NEAR(a[i].values[j], b[i].values[j], 1e-15);
}

/// Reference Adam on one block: the denominator is the block mean of
/// sqrt(v_hat) plus eps, shared by every element.
struct RefAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& x, const std::vector<double>& g, const AdamConfig& c) {
    if (m.empty()) m.assign(x.size(), 0.0), v.assign(x.size(), 0.0);
    ++t;
    double denom = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
      denom += std::sqrt(v[i] / (1 - std::pow(c.beta2, t)));
    }
    denom = denom / x.size() + c.eps;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c.lr * (m[i] / (1 - std::pow(c.beta1, t))) / denom;
  }
};

TEST(Adam, MatchesReferenceOnUnconstrainedBlock) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 6);
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.05;
  // beta of step 0, level 0 is the third block and has no constraint.
  std::vector<double> ref(p.steps[0].regularizer.levels[0].activation.beta);
  RefAdam ra;
  for (int it = 0; it < 5; ++it) {
    auto g = GradientBundle::zeros_like(p);
    auto& gb = g.values.steps[0].regularizer.levels[0].activation.beta;
    for (double& v : gb) v = n(rng);
    std::vector<double> gcopy(gb);
    projected_block_adam(p, g, st, cfg);
    ra.step(ref, gcopy, cfg);
    const auto& got = p.steps[0].regularizer.levels[0].activation.beta;
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-10);
  }
}

TEST(Adam, ScalarBlockMovesByLearningRate) {
  auto p = make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 7);
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.eps = 0.0;
  auto g = GradientBundle::zeros_like(p);
  g.values.steps[0].data.lambda = -4.0;
  const double before = p.steps[0].data.lambda;
  projected_block_adam(p, g, st, cfg);
  EXPECT_NEAR(p.steps[0].data.lambda - before, 0.01, 1e-12);
}

TEST(Adam, VanishingLearningRateKeepsParams) {
  std::mt19937_64 rng(8);
  auto p = random_params(rng, small_arch(DisparityWeight::kLaggedIterate));
  project_theta(p);
  const auto before = p;
  auto g = GradientBundle::zeros_like(p);
  for (auto& b : parameter_blocks(g.values))
    for (double& v : b.values) v = 1.0;
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 1e-14;
  projected_block_adam(p, g, st, cfg);
  const auto a = parameter_blocks(before);
  const auto b = parameter_blocks(p);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].values.size(); ++j) EXPECT_NEAR(a[i].values[j], b[i].values[j], 1e-12);
}

TEST(TrainConfig, TruncationSchedule) {
  TrainConfig c;
  c.epochs = 10;
  c.tau_switch = 0.5;
  c.tau_late = 3.0;
  EXPECT_EQ(c.tau_at(0), kNoTruncation);
  EXPECT_EQ(c.tau_at(4), kNoTruncation);
  EXPECT_EQ(c.tau_at(5), 3.0);
  EXPECT_EQ(c.tau_at(9), 3.0);
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

std::vector<TrainSample<double>> toy_dataset(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::vector<TrainSample<double>> out;
  for (int i = 0; i < count; ++i) out.push_back(random_sample<double>(rng, 12, 12, 16));
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.epochs = 3;
  c.crop = 8;
  c.batch = 2;
  c.seed = 9;
  c.adam.lr = 1e-2;
  return c;
}

TEST(TrainLoop, Deterministic) {
  const auto data = toy_dataset(10, 3);
  const auto arch = small_arch(DisparityWeight::kLaggedIterate);
  TrainState a{make_initial_params(arch, 1), {}, 0};
  TrainState b = a;
  const auto la = train_loop(data, a, toy_config());
  const auto lb = train_loop(data, b, toy_config());
  ASSERT_EQ(la.size(), 3u);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss);
  EXPECT_EQ(a.epoch, 3);
  const auto pa = parameter_blocks(a.params);
  const auto pb = parameter_blocks(b.params);
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()));
}

TEST(TrainLoop, ResumeMatchesUninterrupted) {
  const auto data = toy_dataset(11, 3);
  const auto arch = small_arch(DisparityWeight::kLaggedIterate);
  TrainState full{make_initial_params(arch, 2), {}, 0};
  TrainState split = full;
  const auto lf = train_loop(data, full, toy_config());
  auto first = toy_config();
  first.epochs = 1;
  train_loop(data, split, first);
  const auto rest = train_loop(data, split, toy_config());
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_EQ(rest[0].epoch, 1);
  EXPECT_EQ(rest.back().loss, lf.back().loss);
}

TEST(TrainLoop, LossDecreasesOnToyData) {
  const auto data = toy_dataset(12, 4);
  TrainState st{make_initial_params(small_arch(DisparityWeight::kLaggedIterate), 3), {}, 0};
  auto cfg = toy_config();
  cfg.epochs = 15;
  cfg.crop = 0;
  const auto log = train_loop(data, st, cfg);
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(TrainLoop, PerfectInputsGiveZeroLoss) {
  auto data = toy_dataset(13, 2);
  for (auto& s : data) {
    s.ground_truth = s.inputs.disparity;
    for (auto& v : s.ground_truth.data()) v = std::round(v);
    s.inputs.disparity = s.ground_truth;
  }
  TrainState st{make_zero_params(small_arch(DisparityWeight::kLaggedIterate)), {}, 0};
  auto cfg = toy_config();
  cfg.epochs = 2;
  const auto log = train_loop(data, st, cfg);
  EXPECT_EQ(log.front().loss, 0.0);
  for (const auto& step : st.params.steps) EXPECT_GE(step.alpha, kMinStepSize);
}

TEST(TrainLoop, EmptyDatasetRejected) {
  TrainState st{make_zero_params(small_arch(DisparityWeight::kLaggedIterate)), {}, 0};
  EXPECT_THROW(train_loop(std::vector<TrainSample<double>>{}, st, toy_config()), DataError);
}

TEST(TrainLoop, NonFiniteLossAbortsWithLastGoodState) {
  auto data = toy_dataset(14, 2);
  data[1].ground_truth.at(3, 3) = std::nan("");
  data[1].valid.at(3, 3) = 1;
  const auto arch = small_arch(DisparityWeight::kLaggedIterate);
  TrainState st{make_initial_params(arch, 4), {}, 0};
  auto cfg = toy_config();
  cfg.crop = 0;
  cfg.batch = 1;
  try {
    train_loop(data, st, cfg);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.last_good().epoch, 0);
    for (const auto& b : parameter_blocks(e.last_good().params))
      for (double v : b.values) EXPECT_TRUE(std::isfinite(v));
  }
}

}  // namespace
}  // namespace collabvn
