#include "collabvn/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <fmt/format.h>

#include "collabvn/image_io.hpp"

namespace collabvn {

void SyntheticConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError(fmt::format("synthetic image {}x{} is too small", height, width));
  if (!(max_disparity > 4.0) || disparities < max_disparity + 1) {
    throw ConfigError(fmt::format("synthetic: max disparity {} needs D > it (D = {})", max_disparity, disparities));
  }
  if (min_layers < 0 || max_layers < min_layers) throw ConfigError("synthetic: bad layer count range");
  if (!(noise >= 0.0) || !(outlier_fraction >= 0.0 && outlier_fraction <= 1.0) || !(outlier_depth >= 0.0)) {
    throw ConfigError("synthetic: noise, outlier fraction or depth out of range");
  }
}

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(ix) ^ mix(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth value noise in [0, 1).
double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double tx = smooth(x - fx);
  const double ty = smooth(y - fy);
  const double v00 = lattice(ix, iy, seed);
  const double v10 = lattice(ix + 1, iy, seed);
  const double v01 = lattice(ix, iy + 1, seed);
  const double v11 = lattice(ix + 1, iy + 1, seed);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

struct Layer {
  enum Shape { kFull, kRect, kEllipse } shape = kFull;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  // d(x, y) = a + b x + c y
  double a = 0, b = 0, c = 0;
  std::array<double, 3> color{};
  std::uint64_t texture = 0;

  bool contains(double x, double y) const {
    switch (shape) {
      case kFull:
        return true;
      case kRect:
        return std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
      case kEllipse: {
        const double u = (x - cx) / rx;
        const double v = (y - cy) / ry;
        return u * u + v * v <= 1.0;
      }
    }
    return false;
  }
  double disparity(double x, double y) const { return a + b * x + c * y; }

  double shade(double x, double y) const {
    static constexpr std::array<double, 4> kPeriod{1.5, 3.0, 6.0, 14.0};
    static constexpr std::array<double, 4> kAmp{0.35, 0.3, 0.2, 0.15};
    double t = 0.0;
    for (std::size_t o = 0; o < kPeriod.size(); ++o) {
      t += kAmp[o] * value_noise(x / kPeriod[o], y / kPeriod[o], texture + o);
    }
    return t;
  }
};

struct Hit {
  int layer = -1;
  double x = 0.0;  // left-view column of the surface point
  double d = 0.0;
};

std::vector<Layer> make_scene(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double w = cfg.width;
  const double h = cfg.height;
  const double m = cfg.max_disparity;

  auto finish = [&](Layer& l, double dc, double slope) {
    l.b = uni(-slope, slope);
    l.c = uni(-slope, slope);
    l.a = dc - l.b * l.cx - l.c * l.cy;
    for (double& ch : l.color) ch = uni(0.3, 1.0);
    l.texture = rng();
  };

  std::vector<Layer> layers;
  Layer bg;
  bg.cx = w / 2;
  bg.cy = h / 2;
  const double bg_slope = std::min(0.02, 0.1 * m / (w + h));
  finish(bg, uni(0.1 * m, 0.3 * m), bg_slope);
  layers.push_back(bg);

  const int n = std::uniform_int_distribution<int>(cfg.min_layers, cfg.max_layers)(rng);
  for (int i = 0; i < n; ++i) {
    Layer l;
    l.shape = u(rng) < 0.5 ? Layer::kRect : Layer::kEllipse;
    l.rx = uni(0.08, 0.25) * w;
    l.ry = uni(0.08, 0.25) * h;
    l.cx = uni(0.1, 0.9) * w;
    l.cy = uni(0.1, 0.9) * h;
    // Keep the plane inside [0, max] over the shape's bounding box.
    const double slope = std::min(0.04, 0.05 * m / (l.rx + l.ry));
    const double spread = slope * (l.rx + l.ry);
    finish(l, uni(0.35 * m, m - spread - 0.5), slope);
    layers.push_back(l);
  }
  return layers;
}

// Visible surface at left-view column x, row y.
Hit visible_left(const std::vector<Layer>& layers, double x, double y) {
  Hit best;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    if (!layers[i].contains(x, y)) continue;
    const double d = layers[i].disparity(x, y);
    if (best.layer < 0 || d > best.d) best = {i, x, d};
  }
  return best;
}

// Visible surface at right-view column xr: the left column x with x - d(x) = xr.
Hit visible_right(const std::vector<Layer>& layers, double xr, double y) {
  Hit best;
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const Layer& l = layers[i];
    const double x = (xr + l.a + l.c * y) / (1.0 - l.b);
    if (!l.contains(x, y)) continue;
    const double d = l.disparity(x, y);
    if (best.layer < 0 || d > best.d) best = {i, x, d};
  }
  return best;
}

void inject_outliers(CostVolume<float>& v, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, v.disparities() - 1);
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      if (u(rng) >= cfg.outlier_fraction) continue;
      auto p = v.profile(y, x);
      const auto best = std::min_element(p.begin(), p.end());
      const int arg = static_cast<int>(best - p.begin());
      int d = pick(rng);
      while (std::abs(d - arg) < 2) d = pick(rng);
      p[d] = static_cast<float>(*best - cfg.outlier_depth);
    }
  }
}

}  // namespace

SyntheticPair make_synthetic_pair(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto layers = make_scene(cfg, rng);
  const int h = cfg.height;
  const int w = cfg.width;

  SyntheticPair p;
  p.left = Grid<float>(h, w, 3);
  p.right = Grid<float>(h, w, 3);
  p.ground_truth = Grid<float>(h, w, 1);
  p.noc = Mask(h, w, 1, 0);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  auto put = [&](Grid<float>& img, int y, int x, const Layer& l, double lx) {
    const double t = 0.25 + 0.75 * l.shade(lx, y);
    for (int ch = 0; ch < 3; ++ch) {
      const double v = l.color[ch] * t + (cfg.noise > 0 ? noise(rng) : 0.0);
      img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Hit hl = visible_left(layers, x, y);
      const double d = std::clamp(hl.d, 0.0, cfg.max_disparity);
      p.ground_truth.at(y, x) = static_cast<float>(d);
      put(p.left, y, x, layers[hl.layer], x);
      const double xr = x - hl.d;
      if (xr >= 0.0) {
        const Hit hr = visible_right(layers, xr, y);
        p.noc.at(y, x) = hr.layer == hl.layer && std::abs(hr.d - hl.d) < 0.5;
      }
      const Hit r = visible_right(layers, x, y);
      put(p.right, y, x, layers[r.layer], r.x);
    }
  }

  p.cost = census_cost_volume(p.left, p.right, cfg.disparities, View::kLeft);
  p.cost_right = census_cost_volume(p.left, p.right, cfg.disparities, View::kRight);
  inject_outliers(p.cost, cfg, rng);
  inject_outliers(p.cost_right, cfg, rng);
  return p;
}

void write_synthetic_dataset(const std::filesystem::path& dir, int count, const SyntheticConfig& cfg,
                             std::uint64_t seed) {
  if (count < 1) throw ConfigError(fmt::format("synthetic dataset needs at least one pair, got {}", count));
  for (int i = 0; i < count; ++i) {
    const auto p = make_synthetic_pair(cfg, seed + static_cast<std::uint64_t>(i));
    const auto sub = dir / fmt::format("{:03}", i);
    std::filesystem::create_directories(sub);
    write_png(p.left, sub / "left.png");
    write_png(p.right, sub / "right.png");
    write_cost_volume(p.cost, sub / "cost.cvol");
    write_cost_volume(p.cost_right, sub / "cost_r.cvol");
    write_pfm(p.ground_truth, sub / "gt.pfm");
    Grid<float> noc(p.noc.height(), p.noc.width(), 1);
    for (std::size_t j = 0; j < noc.size(); ++j) noc.data()[j] = p.noc.data()[j] ? 1.0f : 0.0f;
    write_png(noc, sub / "noc.png");
  }
}

}  // namespace collabvn
