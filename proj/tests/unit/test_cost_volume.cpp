#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "collabvn/cost_volume.hpp"
#include "test_support.hpp"

namespace collabvn {
namespace {

using testing::random_grid;
using testing::TempDir;

constexpr double kInf = std::numeric_limits<double>::infinity();

ProbVolume<double> profile(std::initializer_list<double> p) {
  ProbVolume<double> v(1, 1, static_cast<int>(p.size()));
  std::copy(p.begin(), p.end(), v.values().begin());
  return v;
}

Grid<double> row(std::initializer_list<double> v) {
  Grid<double> g(1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), g.data().begin());
  return g;
}

// Textured image and a copy shifted right by `shift` px, so that
// right(x) = left(x + shift) and the left-view disparity is `shift`.
std::pair<Grid<float>, Grid<float>> shift_pair(int h, int w, int shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto left = random_grid<float>(rng, h, w, 1, 0.0, 1.0);
  Grid<float> right(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) right.at(y, x) = left.at(y, std::min(x + shift, w - 1));
  return {left, right};
}

TEST(Census, SelfMatchIsFree) {
  std::mt19937_64 rng(1);
  const auto img = random_grid<float>(rng, 12, 14, 3, 0.0, 1.0);
  const auto v = census_cost_volume(img, img, 4);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 14; ++x) EXPECT_EQ(v.at(y, x, 0), 0.0f);
}

TEST(Census, ShiftedPairArgminAtShift) {
  const auto [l, r] = shift_pair(20, 40, 4, 2);
  const auto v = census_cost_volume(l, r, 10);
  // Local extrema have all-equal signature bits and can tie with other shifts,
  // so the true shift must be among the minimizers everywhere and the unique
  // minimizer almost everywhere.
  int unique = 0, total = 0;
  for (int y = 2; y < 18; ++y) {
    for (int x = 8; x < 34; ++x) {
      const auto p = v.profile(y, x);
      EXPECT_EQ(p[4], 0.0f) << y << "," << x;
      unique += std::count(p.begin(), p.end(), 0.0f) == 1;
      ++total;
    }
  }
  EXPECT_GT(unique, 0.95 * total);
}

TEST(Census, TexturelessTiesAndWtaPicksZero) {
  const Grid<float> c(8, 8, 1, 0.5f);
  const auto v = census_cost_volume(c, c, 3);
  for (int x = 2; x < 8; ++x)
    for (int d = 0; d < 3; ++d) EXPECT_EQ(v.at(4, x, d), 0.0f);
  const auto w = wta(softmax_prob(v, 0.075));
  EXPECT_EQ(w.at(4, 5), 0);
}

TEST(Census, SizeMismatchThrows) {
  EXPECT_THROW(census_cost_volume(Grid<float>(4, 4, 1), Grid<float>(4, 5, 1), 2), ConfigError);
}

TEST(FeatureCost, OneHotAndScalarProduct) {
  FeatureMap<double> a(1, 6, 6);
  for (int x = 0; x < 6; ++x) a.at(0, x, x) = 1.0;
  const auto v = feature_cost_volume(a, a, 3);
  EXPECT_EQ(v.at(0, 4, 0), -1.0);
  EXPECT_EQ(v.at(0, 4, 1), 0.0);
  EXPECT_EQ(v.at(0, 4, 2), 0.0);

  FeatureMap<double> p0(1, 6, 1), p1(1, 6, 1);
  p0.at(0, 4, 0) = 2.0;
  p1.at(0, 1, 0) = 5.0;
  EXPECT_EQ(feature_cost_volume(p0, p1, 4).at(0, 4, 3), -10.0);
}

TEST(FeatureCost, MatchesReference) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  FeatureMap<double> a(3, 9, 4), b(3, 9, 4);
  for (double& v : a.values()) v = n(rng);
  for (double& v : b.values()) v = n(rng);
  const auto vol = feature_cost_volume(a, b, 5);
  for (int y = 0; y < 3; ++y)
    for (int x = 4; x < 9; ++x)
      for (int d = 0; d < 5; ++d) {
        double s = 0;
        for (int f = 0; f < 4; ++f) s += a.at(y, x, f) * b.at(y, x - d, f);
        EXPECT_NEAR(vol.at(y, x, d), -s, 1e-6);
      }
}

TEST(Softmax, Examples) {
  CostVolume<double> v(1, 2, 3);
  for (int d = 0; d < 3; ++d) {
    v.at(0, 0, d) = 0.7;
    v.at(0, 1, d) = d;
  }
  const auto p = softmax_prob(v, 1.0);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(p.at(0, 0, d), 1.0 / 3, 1e-15);
  EXPECT_NEAR(p.at(0, 1, 0), 0.66524, 5e-6);
  EXPECT_NEAR(p.at(0, 1, 1), 0.24473, 5e-6);
  EXPECT_NEAR(p.at(0, 1, 2), 0.09003, 5e-6);
  EXPECT_THROW(softmax_prob(v, 0.0), ConfigError);
  EXPECT_THROW(softmax_prob(v, -1.0), ConfigError);
}

TEST(Wta, ArgmaxAndTies) {
  EXPECT_EQ(wta(profile({0.1, 0.7, 0.2})).at(0, 0), 1);
  EXPECT_EQ(wta(profile({0.4, 0.4, 0.2})).at(0, 0), 0);
}

TEST(Wta, EqualsExhaustiveArgmin) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  CostVolume<double> v(5, 6, 9);
  for (double& c : v.values()) c = u(rng);
  const auto w = wta(softmax_prob(v, 0.075));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      int best = 0;
      for (int d = 1; d < 9; ++d) best = v.at(y, x, d) < v.at(y, x, best) ? d : best;
      EXPECT_EQ(w.at(y, x), best);
    }
}

TEST(Subpixel, Examples) {
  EXPECT_EQ(subpixel_offset(0.2, 0.5, 0.2), 0.0);
  EXPECT_EQ(subpixel_offset(0.2, 0.5, 0.4), 0.25);

  auto p = profile({0.1, 0.2, 0.5, 0.2});
  auto r = subpixel_refine(p, wta(p));
  EXPECT_EQ(r.disparity.at(0, 0), 2.0);
  EXPECT_EQ(r.probability.at(0, 0), 0.5);

  p = profile({0.0, 0.2, 0.5, 0.4});
  r = subpixel_refine(p, wta(p));
  EXPECT_EQ(r.disparity.at(0, 0), 2.25);
  EXPECT_NEAR(r.probability.at(0, 0), 0.475, 1e-15);

  p = profile({0.6, 0.3, 0.1});
  r = subpixel_refine(p, wta(p));
  EXPECT_EQ(r.disparity.at(0, 0), 0.0);
  EXPECT_EQ(r.probability.at(0, 0), 0.6);
}

TEST(Subpixel, OffsetAlwaysInHalfPixel) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double o = subpixel_offset(u(rng), u(rng), u(rng));
    EXPECT_LE(std::abs(o), 0.5);
    const double f = subpixel_offset(u(rng), u(rng), u(rng), SubpixelMode::kForwardNewton);
    EXPECT_LE(std::abs(f), 0.5);
  }
}

TEST(Subpixel, NonNegativeCurvatureGivesZero) {
  EXPECT_EQ(subpixel_offset(0.5, 0.5, 0.5), 0.0);
  EXPECT_EQ(subpixel_offset(0.6, 0.5, 0.6), 0.0);
}

TEST(Subpixel, ForwardNewtonFlag) {
  // The printed forward-difference step moves a symmetric maximum by half a pixel.
  EXPECT_NEAR(subpixel_offset(0.2, 0.5, 0.2, SubpixelMode::kForwardNewton), -0.5, 1e-15);
}

TEST(SubpixelGrad, ExamplesAndFiniteDifferences) {
  const auto gs = subpixel_offset_grad(0.2, 0.5, 0.2);
  EXPECT_EQ(gs[1], 0.0);
  const auto g = subpixel_offset_grad(0.2, 0.5, 0.4);
  const double h = 1e-6;
  const double fa = (subpixel_offset(0.2 + h, 0.5, 0.4) - subpixel_offset(0.2 - h, 0.5, 0.4)) / (2 * h);
  const double fb = (subpixel_offset(0.2, 0.5 + h, 0.4) - subpixel_offset(0.2, 0.5 - h, 0.4)) / (2 * h);
  const double fc = (subpixel_offset(0.2, 0.5, 0.4 + h) - subpixel_offset(0.2, 0.5, 0.4 - h)) / (2 * h);
  EXPECT_NEAR(g[0], fa, 1e-6);
  EXPECT_NEAR(g[1], fb, 1e-6);
  EXPECT_NEAR(g[2], fc, 1e-6);

  auto p = profile({0.6, 0.3, 0.1});
  const auto sg = subpixel_grad(p, wta(p));
  EXPECT_EQ(sg.wrt_prev.at(0, 0), 0.0);
  EXPECT_EQ(sg.wrt_center.at(0, 0), 0.0);
  EXPECT_EQ(sg.wrt_next.at(0, 0), 0.0);
}

TEST(LrDistance, Examples) {
  // Consistent pair: the right map holds -d at the matched column.
  const auto dl = row({0, 0, 2, 2, 2, 0});
  const auto dr = row({-2, -2, -2, 0, 0, 0});
  const auto d = lr_distance(dl, dr);
  for (int x : {2, 3, 4}) EXPECT_EQ(d.at(0, x), 0.0);

  Grid<double> l(1, 9), r(1, 9);
  l.at(0, 6) = 5;
  r.at(0, 1) = -3;
  EXPECT_EQ(lr_distance(l, r).at(0, 6), 2.0);
  l.at(0, 1) = 5;
  r.at(0, 6) = -3;
  EXPECT_EQ(lr_distance(l, r, LrLookup::kPrinted).at(0, 1), 2.0);

  Grid<double> far(1, 3, 1, 2.5);
  const auto oob = lr_distance(far, Grid<double>(1, 3));
  EXPECT_EQ(oob.at(0, 0), kInf);
  EXPECT_EQ(occlusion_prob(oob, 3.0).at(0, 0), 0.0);
  EXPECT_EQ(lr_distance(far, Grid<double>(1, 3), LrLookup::kPrinted).at(0, 2), kInf);
}

TEST(Occlusion, Examples) {
  const auto p = occlusion_prob(row({0.0, 1.5, 3.0, 7.0, kInf}), 3.0);
  EXPECT_EQ(p.at(0, 0), 1.0);
  EXPECT_EQ(p.at(0, 1), 0.5);
  EXPECT_EQ(p.at(0, 2), 0.0);
  EXPECT_EQ(p.at(0, 3), 0.0);
  EXPECT_EQ(p.at(0, 4), 0.0);
  EXPECT_THROW(occlusion_prob(row({0.0}), 0.0), ConfigError);
}

TEST(Confidence, Product) {
  const auto c = total_confidence(row({1.0, 0.8, 0.9}), row({1.0, 0.5, 0.0}));
  EXPECT_EQ(c.at(0, 0), 1.0);
  EXPECT_NEAR(c.at(0, 1), 0.4, 1e-15);
  EXPECT_EQ(c.at(0, 2), 0.0);
}

TEST(Inpaint, Examples) {
  auto r = inpaint_occluded(row({5, 5, 9, 9, 7}), row({1, 1, 0, 0, 1}));
  EXPECT_EQ(r.disparity, row({5, 5, 5, 5, 7}));
  EXPECT_EQ(r.status.at(0, 2), kInpainted);
  EXPECT_EQ(r.status.at(0, 4), kValid);

  r = inpaint_occluded(row({8, 4, 4}), row({0, 0.5, 1}));
  EXPECT_EQ(r.disparity, row({4, 4, 4}));

  const auto same = row({1, 2, 3});
  EXPECT_EQ(inpaint_occluded(same, row({1, 1, 1})).disparity, same);
}

TEST(Inpaint, FullyInvalidRowsUseMedian) {
  Grid<double> d(2, 3), po(2, 3);
  for (int x = 0; x < 3; ++x) {
    d.at(0, x) = 1 + x;
    po.at(0, x) = 1;
    d.at(1, x) = 50;
  }
  const auto r = inpaint_occluded(d, po);
  for (int x = 0; x < 3; ++x) {
    EXPECT_EQ(r.disparity.at(1, x), 2.0);
    EXPECT_EQ(r.status.at(1, x), kFallback);
  }
  const auto none = inpaint_occluded(d, Grid<double>(2, 3));
  for (double v : none.disparity.data()) EXPECT_EQ(v, 0.0);
}

TEST(Inpaint, Idempotent) {
  std::mt19937_64 rng(6);
  auto d = random_grid<double>(rng, 6, 9, 1, 0, 20);
  auto po = random_grid<double>(rng, 6, 9, 1, -1, 1);
  for (double& v : po.data()) v = std::max(v, 0.0);
  const auto once = inpaint_occluded(d, po);
  Grid<double> ones(6, 9, 1, 1.0);
  for (std::size_t i = 0; i < ones.size(); ++i) {
    if (once.status.data()[i] != kValid) ones.data()[i] = 0.0;
  }
  EXPECT_EQ(inpaint_occluded(once.disparity, po).disparity, once.disparity);
}

TEST(BuildInputs, ShiftedPair) {
  const auto [l, r] = shift_pair(24, 48, 4, 7);
  const auto vl = census_cost_volume(l, r, 12, View::kLeft);
  const auto vr = census_cost_volume(l, r, 12, View::kRight);
  const auto in = build_inputs(l, vl, vr);
  EXPECT_NO_THROW(in.validate());
  EXPECT_EQ(in.image.channels(), 3);
  // Census ties at local extrema, so a few interior pixels may pick another shift.
  double mean = 0;
  int n = 0, hits = 0;
  for (int y = 2; y < 22; ++y) {
    for (int x = 10; x < 40; ++x) {
      hits += std::abs(in.disparity.at(y, x) - 4.0) <= 0.5;
      mean += in.confidence.at(y, x);
      ++n;
    }
  }
  EXPECT_GE(hits, 0.95 * n);
  mean /= n;
  EXPECT_GT(mean, 0.8);
  // Left pixels with x < 4 have no partner in the right view.
  double border = 0;
  for (int y = 2; y < 22; ++y) {
    for (int x = 0; x < 4; ++x) border += in.confidence.at(y, x);
  }
  EXPECT_LT(border / 80, mean);
}

TEST(BuildInputs, IdenticalImages) {
  std::mt19937_64 rng(8);
  const auto img = random_grid<float>(rng, 16, 16, 3, 0.0, 1.0);
  const auto in = build_inputs(img, census_cost_volume(img, img, 6), census_cost_volume(img, img, 6, View::kRight));
  double mean = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_NEAR(in.disparity.at(y, x), 0.0, 0.5);
      mean += in.confidence.at(y, x) / 256.0;
    }
  EXPECT_GT(mean, 0.9);
}

TEST(BuildInputs, BlackRightImage) {
  std::mt19937_64 rng(9);
  const auto l = random_grid<float>(rng, 12, 16, 1, 0.0, 1.0);
  const Grid<float> r(12, 16, 1);
  const auto in = build_inputs(l, census_cost_volume(l, r, 6), census_cost_volume(l, r, 6, View::kRight));
  EXPECT_NO_THROW(in.validate());
  double mean = 0;
  for (float c : in.confidence.data()) mean += c / in.confidence.size();
  EXPECT_LT(mean, 0.35);
}

TEST(CostVolumeFile, RoundTripAndErrors) {
  TempDir dir("cvol");
  std::mt19937_64 rng(10);
  std::normal_distribution<float> n;
  CostVolume<float> v(3, 4, 5);
  for (float& c : v.values()) c = n(rng);
  write_cost_volume(v, dir / "v.cvol");
  const auto back = read_cost_volume(dir / "v.cvol");
  ASSERT_TRUE(back.same_shape(v));
  EXPECT_TRUE(std::equal(v.values().begin(), v.values().end(), back.values().begin()));

  // Header layout: 8-byte magic, then H, W, D.
  std::ifstream f(dir / "v.cvol", std::ios::binary);
  char magic[8];
  f.read(magic, 8);
  EXPECT_EQ(std::string(magic, 5), "CVOL1");
  EXPECT_EQ(magic[5], 0);

  std::filesystem::resize_file(dir / "v.cvol", 8 + 12 + 4 * 10);
  EXPECT_THROW(read_cost_volume(dir / "v.cvol"), FormatError);
  {
    std::ofstream g(dir / "bad.cvol", std::ios::binary);
    g << "CVOL2\0\0\0";
  }
  EXPECT_THROW(read_cost_volume(dir / "bad.cvol"), FormatError);
}

TEST(FeatureMapFile, RoundTrip) {
  TempDir dir("fmap");
  FeatureMap<float> f(2, 3, 4);
  for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = static_cast<float>(i) * 0.25f - 1.0f;
  write_feature_map(f, dir / "f.fmap");
  const auto back = read_feature_map(dir / "f.fmap");
  ASSERT_TRUE(back.same_shape(f));
  EXPECT_TRUE(std::equal(f.values().begin(), f.values().end(), back.values().begin()));
}

}  // namespace
}  // namespace collabvn
