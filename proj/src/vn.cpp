#include "collabvn/vn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace collabvn {

std::string VnArchitecture::name() const { return fmt::format("VN^{{{},{}}}_{}", steps, ksize, levels); }

void VnArchitecture::validate() const {
  if (steps < 1) throw ConfigError(fmt::format("need at least one step, got {}", steps));
  if (levels < 1) throw ConfigError(fmt::format("need at least one level, got {}", levels));
  if (filters < 1) throw ConfigError(fmt::format("need at least one filter, got {}", filters));
  if (ksize < 1 || ksize % 2 == 0) throw ConfigError(fmt::format("kernel size must be odd and positive, got {}", ksize));
  pyramid().validate();
  rbf.validate();
}

void VnParams::validate() const {
  arch.validate();
  if (static_cast<int>(steps.size()) != arch.steps) {
    throw ConfigError(fmt::format("{} step parameter sets for a {}-step network", steps.size(), arch.steps));
  }
  for (const auto& s : steps) {
    s.regularizer.validate();
    if (s.regularizer.filters() != arch.filters || s.regularizer.ksize() != arch.ksize) {
      throw ConfigError(fmt::format("step has {} filters of size {}, architecture expects {} of size {}",
                                    s.regularizer.filters(), s.regularizer.ksize(), arch.filters, arch.ksize));
    }
    if (!std::isfinite(s.alpha) || !std::isfinite(s.data.lambda) || !std::isfinite(s.data.mu) ||
        !std::isfinite(s.data.nu)) {
      throw ConfigError("non-finite data weight or step size");
    }
  }
}

VnParams make_zero_params(const VnArchitecture& arch) {
  arch.validate();
  VnParams p{arch, {}};
  for (int t = 0; t < arch.steps; ++t) {
    StepParams s;
    s.regularizer.pyramid = arch.pyramid();
    for (int l = 0; l < arch.levels; ++l) {
      LevelParams lv{FilterBank(arch.filters, channel::kCount, arch.ksize), RbfActivation(arch.rbf, arch.filters)};
      std::fill(lv.activation.beta.begin(), lv.activation.beta.end(), 0.0);
      s.regularizer.levels.push_back(std::move(lv));
    }
    p.steps.push_back(std::move(s));
  }
  return p;
}

VnParams make_initial_params(const VnArchitecture& arch, std::uint64_t seed) {
  return make_initial_params(arch, seed, InitialWeights{});
}

VnParams make_initial_params(const VnArchitecture& arch, std::uint64_t seed, const InitialWeights& w) {
  VnParams p = make_zero_params(arch);
  const std::vector<double> fit = fit_rbf(arch.rbf, [](double s) { return s; });
  double fit_norm = 0.0;
  for (double v : fit) fit_norm += v * v;
  fit_norm = std::sqrt(fit_norm);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const double target_norm = 1.0 / std::sqrt(static_cast<double>(arch.filters));
  for (auto& step : p.steps) {
    step.data = {w.lambda, w.mu, w.nu};
    step.alpha = w.alpha;
    for (auto& lv : step.regularizer.levels) {
      for (int k = 0; k < arch.filters; ++k) {
        auto taps = lv.filters.kernel(k);
        for (double& t : taps) t = normal(rng);
        double mean = 0.0;
        for (double t : taps) mean += t;
        mean /= static_cast<double>(taps.size());
        double norm = 0.0;
        for (double& t : taps) {
          t -= mean;
          norm += t * t;
        }
        norm = std::sqrt(norm);
        for (double& t : taps) t *= norm > 0.0 ? target_norm / norm : 0.0;
        auto row = lv.activation.row(k);
        for (int b = 0; b < arch.rbf.count; ++b) row[b] = fit[b] / fit_norm;
        lv.activation.beta[k] = fit_norm;
      }
    }
  }
  return p;
}

template <typename T>
CollabState<T> init_state(const RefinementInputs<T>& inputs) {
  inputs.validate();
  const int h = inputs.disparity.height();
  const int w = inputs.disparity.width();
  CollabState<T> u(h, w, channel::kCount);
  for (int c = 0; c < channel::kColorCount; ++c) u.set_channel(c, inputs.image.channel(c));
  const double scale = inputs.scale();
  auto d = u.plane(channel::kDisparity);
  const auto src = inputs.disparity.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(static_cast<double>(src[i]) / scale);
  u.set_channel(channel::kConfidence, inputs.confidence);
  return u;
}

template <typename T>
CollabState<T> vn_step(const CollabState<T>& u, const DataAnchors<T>& anchors, const StepParams& step,
                       DisparityWeight mode) {
  CollabState<T> ut = u;
  if (step.alpha != 0.0) axpy(ut, -step.alpha, foe_grad(u, step.regularizer));
  return prox_data(ut, anchors, step.data, step.alpha, mode);
}

template <typename T>
VnResult<T> vn_forward(const CollabState<T>& u0, const VnParams& params, bool record) {
  check_state(u0.channels(), "vn_forward");
  const auto anchors = DataAnchors<T>::from_state(u0);
  VnResult<T> r{u0, {}};
  if (record) r.trajectory.push_back(u0);
  for (const auto& step : params.steps) {
    r.output = vn_step(r.output, anchors, step, params.arch.weight_mode);
    if (!r.output.all_finite()) throw NumericalError("vn_forward: non-finite state");
    if (record) r.trajectory.push_back(r.output);
  }
  return r;
}

template <typename T>
Grid<T> extract_disparity(const CollabState<T>& u, int disparities) {
  check_state(u.channels(), "extract_disparity");
  if (disparities < 2) throw ConfigError("extract_disparity: need at least 2 disparities");
  const double scale = disparities - 1;
  Grid<T> d(u.height(), u.width());
  const auto src = u.plane(channel::kDisparity);
  for (std::size_t i = 0; i < src.size(); ++i) {
    d.data()[i] = static_cast<T>(std::clamp(static_cast<double>(src[i]) * scale, 0.0, scale));
  }
  return d;
}

template <typename T>
Grid<T> extract_confidence(const CollabState<T>& u) {
  check_state(u.channels(), "extract_confidence");
  Grid<T> c = u.channel(channel::kConfidence);
  for (T& v : c.data()) v = std::clamp(v, T(0), T(1));
  return c;
}

#define COLLABVN_INSTANTIATE(T)                                                                             \
  template CollabState<T> init_state<T>(const RefinementInputs<T>&);                                        \
  template CollabState<T> vn_step<T>(const CollabState<T>&, const DataAnchors<T>&, const StepParams&,       \
                                     DisparityWeight);                                                      \
  template VnResult<T> vn_forward<T>(const CollabState<T>&, const VnParams&, bool);                         \
  template Grid<T> extract_disparity<T>(const CollabState<T>&, int);                                        \
  template Grid<T> extract_confidence<T>(const CollabState<T>&);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
