#include "collabvn/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "collabvn/image_io.hpp"

namespace collabvn {

namespace {

// Piecewise-linear jet: dark blue, blue, cyan, yellow, red, dark red.
std::array<float, 3> jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  return {ramp(1.5 - std::abs(4.0 * t - 3.0)), ramp(1.5 - std::abs(4.0 * t - 2.0)),
          ramp(1.5 - std::abs(4.0 * t - 1.0))};
}

}  // namespace

Grid<float> colorize_disparity(const Grid<float>& disparity, double max_disparity) {
  if (disparity.channels() != 1) throw ConfigError("colorize_disparity: expected one channel");
  if (!(max_disparity > 0.0)) throw ConfigError("colorize_disparity: max disparity must be positive");
  Grid<float> out(disparity.height(), disparity.width(), 3);
  for (int y = 0; y < disparity.height(); ++y) {
    for (int x = 0; x < disparity.width(); ++x) {
      const auto c = jet(disparity.at(y, x) / max_disparity);
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[ch];
    }
  }
  return out;
}

Grid<float> filter_mosaic(const FilterBank& bank, int zoom) {
  if (zoom < 1) throw ConfigError("filter_mosaic: zoom must be positive");
  const int ks = bank.ksize();
  const int tile = ks * zoom;
  const int rows = bank.filters();
  const int cols = bank.in_channels();
  Grid<float> out(rows * (tile + 1) + 1, cols * (tile + 1) + 1, 1, 0.5f);
  double peak = 0.0;
  for (double t : bank.taps()) peak = std::max(peak, std::abs(t));
  if (peak == 0.0) return out;
  for (int k = 0; k < rows; ++k) {
    for (int c = 0; c < cols; ++c) {
      for (int y = 0; y < tile; ++y) {
        for (int x = 0; x < tile; ++x) {
          const double t = bank.tap(k, c, y / zoom, x / zoom);
          out.at(1 + k * (tile + 1) + y, 1 + c * (tile + 1) + x) = static_cast<float>(0.5 + 0.5 * t / peak);
        }
      }
    }
  }
  return out;
}

ActivationSamples sample_activation(const RbfActivation& act, int count) {
  if (count < 2) throw ConfigError("sample_activation: need at least two samples");
  ActivationSamples out;
  const double r = act.basis.range;
  for (int i = 0; i < count; ++i) out.s.push_back(-r + 2.0 * r * i / (count - 1));
  out.rho.assign(act.filters, std::vector<double>(count));
  out.phi.assign(act.filters, std::vector<double>(count));
  for (int k = 0; k < act.filters; ++k) {
    for (int i = 0; i < count; ++i) {
      out.rho[k][i] = rbf_eval(act, k, out.s[i]);
      out.phi[k][i] = rbf_integral(act, k, out.s[i]);
    }
  }
  return out;
}

void write_activation_csv(const ActivationSamples& samples, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError(fmt::format("cannot write {}", path.string()));
  const std::size_t k = samples.rho.size();
  f << "s";
  for (std::size_t j = 0; j < k; ++j) f << ",rho_" << j;
  for (std::size_t j = 0; j < k; ++j) f << ",phi_" << j;
  f << '\n';
  for (std::size_t i = 0; i < samples.s.size(); ++i) {
    f << fmt::format("{:.6g}", samples.s[i]);
    for (std::size_t j = 0; j < k; ++j) f << fmt::format(",{:.9g}", samples.rho[j][i]);
    for (std::size_t j = 0; j < k; ++j) f << fmt::format(",{:.9g}", samples.phi[j][i]);
    f << '\n';
  }
  if (!f) throw DataError(fmt::format("failed writing {}", path.string()));
}

Grid<float> plot_curves(const std::vector<double>& x, const std::vector<std::vector<double>>& curves, int width,
                        int height) {
  if (x.size() < 2 || width < 16 || height < 16) throw ConfigError("plot_curves: degenerate plot");
  Grid<float> img(height, width, 3, 1.0f);
  double half = 1.0;
  for (const auto& c : curves) {
    if (c.size() != x.size()) throw ConfigError("plot_curves: curve length differs from x");
    for (double v : c) {
      if (std::isfinite(v)) half = std::max(half, std::abs(v));
    }
  }
  const double x0 = x.front();
  const double x1 = x.back();
  auto px = [&](double v) { return static_cast<int>(std::lround((v - x0) / (x1 - x0) * (width - 1))); };
  auto py = [&](double v) { return static_cast<int>(std::lround((0.5 - 0.5 * v / half) * (height - 1))); };
  auto set = [&](int yy, int xx, const std::array<float, 3>& c) {
    if (yy < 0 || yy >= height || xx < 0 || xx >= width) return;
    for (int ch = 0; ch < 3; ++ch) img.at(yy, xx, ch) = c[ch];
  };
  const std::array<float, 3> axis{0.6f, 0.6f, 0.6f};
  for (int xx = 0; xx < width; ++xx) set(py(0.0), xx, axis);
  if (x0 < 0.0 && x1 > 0.0) {
    for (int yy = 0; yy < height; ++yy) set(yy, px(0.0), axis);
  }
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto color = jet(curves.size() > 1 ? static_cast<double>(k) / (curves.size() - 1) : 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
      // Connect consecutive samples with enough dots to leave no gaps.
      const int xa = px(x[i]), xb = px(x[i + 1]);
      const int ya = py(curves[k][i]), yb = py(curves[k][i + 1]);
      const int n = std::max({std::abs(xb - xa), std::abs(yb - ya), 1});
      for (int j = 0; j <= n; ++j) {
        set(ya + (yb - ya) * j / n, xa + (xb - xa) * j / n, color);
      }
    }
  }
  return img;
}

std::vector<std::filesystem::path> dump_trajectory(const std::vector<CollabState<float>>& trajectory,
                                                   int disparities, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  const double scale = disparities > 1 ? disparities - 1 : 1;
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    const auto& u = trajectory[t];
    check_state(u.channels(), "dump_trajectory");
    Grid<float> rgb(u.height(), u.width(), 3);
    Grid<float> disp(u.height(), u.width(), 1);
    Grid<float> conf(u.height(), u.width(), 1);
    for (int y = 0; y < u.height(); ++y) {
      for (int x = 0; x < u.width(); ++x) {
        for (int ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = u.at(y, x, ch);
        disp.at(y, x) = static_cast<float>(u.at(y, x, channel::kDisparity) * scale);
        conf.at(y, x) = std::clamp(u.at(y, x, channel::kConfidence), 0.0f, 1.0f);
      }
    }
    const auto base = dir / fmt::format("step_{:02}", t);
    out.push_back(base.string() + "_rgb.png");
    write_png(rgb, out.back());
    out.push_back(base.string() + "_disparity.png");
    write_png(colorize_disparity(disp, scale), out.back());
    out.push_back(base.string() + "_confidence.png");
    write_png(conf, out.back());
  }
  return out;
}

}  // namespace collabvn
