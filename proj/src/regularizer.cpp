#include "collabvn/regularizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace collabvn {

void RbfBasis::validate() const {
  if (count < 1) throw ConfigError(fmt::format("RBF basis needs at least one function, got {}", count));
  if (!(range > 0.0)) throw ConfigError(fmt::format("RBF range must be positive, got {}", range));
  if (!(bandwidth() > 0.0)) throw ConfigError("RBF bandwidth must be positive");
}

RbfActivation::RbfActivation(const RbfBasis& b, int k)
    : basis(b), filters(k), weights(static_cast<std::size_t>(k) * b.count, 0.0), beta(k, 1.0) {
  basis.validate();
}

namespace {

// Gaussians further than this many bandwidths from s are ignored.
constexpr double kWindow = 8.0;

struct Window {
  double delta;   // mean spacing in bandwidth units
  double ratio0;  // exp(-delta^2 / 2)
  double decay;   // exp(-delta^2)
  int reach;      // basis functions visited on each side of the nearest one
};

Window make_window(const RbfBasis& basis) {
  const double delta = basis.spacing() / basis.bandwidth();
  return {delta, std::exp(-0.5 * delta * delta), std::exp(-delta * delta),
          static_cast<int>(std::ceil(kWindow / delta))};
}

// Visits (b, g_b(s), u_b) for the Gaussians within the window, where
// u_b = (s - gamma_b) / sigma and g_b = exp(-u_b^2 / 2). Consecutive values
// follow from g_{b+1} = g_b * exp(u_b * delta - delta^2 / 2).
template <typename F>
inline void visit_window(const RbfBasis& basis, const Window& win, double s, F&& f) {
  const double sigma = basis.bandwidth();
  const int last = basis.count - 1;
  const double t = (s - basis.mean(0)) / basis.spacing();
  const int b0 = static_cast<int>(std::clamp(std::nearbyint(t), 0.0, static_cast<double>(last)));
  const double u0 = (s - basis.mean(b0)) / sigma;
  if (!(std::abs(u0) <= kWindow + 0.5 * win.delta)) return;
  const double g0 = std::exp(-0.5 * u0 * u0);
  f(b0, g0, u0);
  const int hi = std::min(last, b0 + win.reach);
  const double e = std::exp(u0 * win.delta);
  double g = g0;
  double u = u0;
  double ratio = e * win.ratio0;
  for (int b = b0 + 1; b <= hi; ++b) {
    g *= ratio;
    ratio *= win.decay;
    u -= win.delta;
    f(b, g, u);
  }
  const int lo = std::max(0, b0 - win.reach);
  g = g0;
  u = u0;
  ratio = win.ratio0 / e;
  for (int b = b0 - 1; b >= lo; --b) {
    g *= ratio;
    ratio *= win.decay;
    u += win.delta;
    f(b, g, u);
  }
}

}  // namespace

double rbf_eval(const RbfActivation& act, int k, double s) {
  const auto w = act.row(k);
  double acc = 0.0;
  visit_window(act.basis, make_window(act.basis), s, [&](int b, double g, double) { acc += w[b] * g; });
  return act.beta[k] * acc;
}

double rbf_derivative(const RbfActivation& act, int k, double s) {
  const auto w = act.row(k);
  double acc = 0.0;
  visit_window(act.basis, make_window(act.basis), s, [&](int b, double g, double u) { acc += w[b] * g * u; });
  return -act.beta[k] * acc / act.basis.bandwidth();
}

double rbf_integral(const RbfActivation& act, int k, double s) {
  const double sigma = act.basis.bandwidth();
  const double scale = sigma * std::sqrt(std::numbers::pi / 2.0);
  const double inv = 1.0 / (sigma * std::numbers::sqrt2);
  const auto w = act.row(k);
  double acc = 0.0;
  for (int b = 0; b < act.basis.count; ++b) {
    if (w[b] == 0.0) continue;
    const double m = act.basis.mean(b);
    acc += w[b] * (std::erf((s - m) * inv) - std::erf(-m * inv));
  }
  return act.beta[k] * scale * acc;
}

template <typename T>
void rbf_eval(const RbfActivation& act, int k, std::span<const T> s, std::span<T> rho, std::span<T> drho) {
  const auto w = act.row(k);
  const double beta = act.beta[k];
  const double dscale = -beta / act.basis.bandwidth();
  const Window win = make_window(act.basis);
  const bool want_slope = !drho.empty();
  for (std::size_t i = 0; i < s.size(); ++i) {
    double acc = 0.0;
    double dacc = 0.0;
    visit_window(act.basis, win, static_cast<double>(s[i]), [&](int b, double g, double u) {
      const double wg = w[b] * g;
      acc += wg;
      dacc += wg * u;
    });
    rho[i] = static_cast<T>(beta * acc);
    if (want_slope) drho[i] = static_cast<T>(dscale * dacc);
  }
}

template <typename T>
void rbf_basis_dot(const RbfBasis& basis, std::span<const T> s, std::span<const T> q, std::span<double> out) {
  const Window win = make_window(basis);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double qi = q[i];
    if (qi == 0.0) continue;
    visit_window(basis, win, static_cast<double>(s[i]), [&](int b, double g, double) { out[b] += qi * g; });
  }
}

std::vector<double> fit_rbf(const RbfBasis& basis, const std::function<double(double)>& target, int samples) {
  basis.validate();
  if (samples < basis.count) throw ConfigError("fit_rbf: fewer samples than basis functions");
  const double sigma = basis.bandwidth();
  Eigen::MatrixXd a(samples, basis.count);
  Eigen::VectorXd y(samples);
  for (int i = 0; i < samples; ++i) {
    const double s = -basis.range + 2.0 * basis.range * i / (samples - 1);
    y(i) = target(s);
    for (int b = 0; b < basis.count; ++b) {
      const double u = (s - basis.mean(b)) / sigma;
      a(i, b) = std::exp(-0.5 * u * u);
    }
  }
  const Eigen::VectorXd w = a.colPivHouseholderQr().solve(y);
  return {w.data(), w.data() + w.size()};
}

double rbf_max_slope(const RbfActivation& act, int k) {
  const double sigma = act.basis.bandwidth();
  const double lim = act.basis.range + kWindow * sigma;
  const int n = static_cast<int>(std::ceil(2.0 * lim / sigma * 32.0));
  double best = 0.0;
  for (int i = 0; i <= n; ++i) best = std::max(best, std::abs(rbf_derivative(act, k, -lim + 2.0 * lim * i / n)));
  return best;
}

void RegularizerParams::validate() const {
  pyramid.validate();
  if (levels.empty()) throw ConfigError("RegularizerParams: no levels");
  if (static_cast<int>(levels.size()) != pyramid.levels) {
    throw ConfigError(fmt::format("RegularizerParams: {} levels but the pyramid has {}", levels.size(),
                                  pyramid.levels));
  }
  const int k = filters();
  const int ks = ksize();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    if (lv.filters.filters() != k || lv.filters.ksize() != ks || lv.filters.in_channels() != channel::kCount) {
      throw ConfigError(fmt::format("RegularizerParams: level {} has {} filters of {}x{}x{}, expected {} of 5x{}x{}",
                                    l, lv.filters.filters(), lv.filters.in_channels(), lv.filters.ksize(),
                                    lv.filters.ksize(), k, ks, ks));
    }
    const auto& a = lv.activation;
    a.basis.validate();
    if (a.filters != k || a.weights.size() != static_cast<std::size_t>(k) * a.basis.count ||
        a.beta.size() != static_cast<std::size_t>(k)) {
      throw ConfigError(fmt::format("RegularizerParams: level {} activation table does not match {} filters", l, k));
    }
  }
}

template <typename T>
double foe_energy(const CollabState<T>& u, const RegularizerParams& params) {
  check_state(u.channels(), "foe_energy");
  Grid<T> z = u;
  double energy = 0.0;
  for (std::size_t l = 0; l < params.levels.size(); ++l) {
    if (l > 0) z = downsample_blur(z, params.pyramid);
    const auto& lv = params.levels[l];
    const Grid<T> s = conv2d(z, lv.filters);
    for (int k = 0; k < lv.filters.filters(); ++k) {
      for (T v : s.plane(k)) energy += rbf_integral(lv.activation, k, static_cast<double>(v));
    }
  }
  return energy;
}

template <typename T>
CollabState<T> foe_grad(const CollabState<T>& u, const RegularizerParams& params) {
  check_state(u.channels(), "foe_grad");
  const auto shapes = level_shapes(u.height(), u.width(), static_cast<int>(params.levels.size()));
  Grid<T> z = u;
  Grid<T> total(u.height(), u.width(), u.channels());
  for (std::size_t l = 0; l < params.levels.size(); ++l) {
    if (l > 0) z = downsample_blur(z, params.pyramid);
    const auto& lv = params.levels[l];
    Grid<T> s = conv2d(z, lv.filters);
    for (int k = 0; k < lv.filters.filters(); ++k) {
      rbf_eval<T>(lv.activation, k, s.plane(k), s.plane(k));
    }
    Grid<T> back = conv2d_adjoint(s, lv.filters);
    for (int lvl = static_cast<int>(l); lvl > 0; --lvl) {
      back = upsample_sharpen(back, params.pyramid, shapes[lvl - 1].first, shapes[lvl - 1].second);
    }
    axpy(total, 1.0, back);
  }
  return total;
}

double foe_lipschitz(const RegularizerParams& params, int height, int width, int iterations, unsigned seed) {
  double slope = 0.0;
  for (const auto& lv : params.levels) {
    for (int k = 0; k < lv.activation.filters; ++k) slope = std::max(slope, rbf_max_slope(lv.activation, k));
  }
  const auto shapes = level_shapes(height, width, static_cast<int>(params.levels.size()));
  auto apply = [&](const Grid<double>& v) {
    Grid<double> out(height, width, channel::kCount);
    Grid<double> z = v;
    for (std::size_t l = 0; l < params.levels.size(); ++l) {
      if (l > 0) z = downsample_blur(z, params.pyramid);
      Grid<double> back = conv2d_adjoint(conv2d(z, params.levels[l].filters), params.levels[l].filters);
      for (int lvl = static_cast<int>(l); lvl > 0; --lvl) {
        back = upsample_sharpen(back, params.pyramid, shapes[lvl - 1].first, shapes[lvl - 1].second);
      }
      axpy(out, 1.0, back);
    }
    return out;
  };
  std::mt19937 rng(seed);
  std::normal_distribution<double> normal;
  Grid<double> v(height, width, channel::kCount);
  for (double& x : v.data()) x = normal(rng);
  double norm = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double n = norm2(v);
    if (n == 0.0) return 0.0;
    for (double& x : v.data()) x /= n;
    v = apply(v);
    norm = norm2(v);
  }
  return slope * norm;
}

#define COLLABVN_INSTANTIATE(T)                                                                           \
  template void rbf_eval<T>(const RbfActivation&, int, std::span<const T>, std::span<T>, std::span<T>);    \
  template void rbf_basis_dot<T>(const RbfBasis&, std::span<const T>, std::span<const T>, std::span<double>); \
  template double foe_energy<T>(const CollabState<T>&, const RegularizerParams&);                          \
  template CollabState<T> foe_grad<T>(const CollabState<T>&, const RegularizerParams&);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
