#include "collabvn/data_term.hpp"

#include <cmath>

#include <fmt/format.h>

namespace collabvn {

template <typename T>
DataAnchors<T> DataAnchors<T>::from_state(const CollabState<T>& u0) {
  check_state(u0.channels(), "DataAnchors");
  DataAnchors a{Grid<T>(u0.height(), u0.width(), channel::kColorCount), u0.channel(channel::kDisparity),
                u0.channel(channel::kConfidence)};
  for (int c = 0; c < channel::kColorCount; ++c) a.rgb.set_channel(c, u0.channel(c));
  return a;
}

template <typename T>
void DataAnchors<T>::check(const CollabState<T>& u, const char* what) const {
  check_state(u.channels(), what);
  if (!u.same_extent(rgb) || rgb.channels() != channel::kColorCount || !u.same_extent(disparity) ||
      !u.same_extent(confidence) || disparity.channels() != 1 || confidence.channels() != 1) {
    throw ConfigError(fmt::format("{}: anchors {} / {} / {} do not match state {}", what, shape_string(rgb),
                                  shape_string(disparity), shape_string(confidence), shape_string(u)));
  }
}

template <typename T>
Grid<T> prox_l2(const Grid<T>& u_tilde, const Grid<T>& u0, double lambda, double alpha) {
  if (!u_tilde.same_shape(u0)) throw ConfigError("prox_l2: shape mismatch");
  const double m = lambda * alpha;
  const double inv = 1.0 / (1.0 + m);
  Grid<T> out(u_tilde.height(), u_tilde.width(), u_tilde.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<T>((u_tilde.data()[i] + m * u0.data()[i]) * inv);
  }
  return out;
}

template <typename T>
Grid<T> prox_weighted_l1(const Grid<T>& u_tilde, const Grid<T>& u0, const Grid<T>& w, double gamma, double alpha) {
  if (!u_tilde.same_shape(u0) || !u_tilde.same_shape(w)) throw ConfigError("prox_weighted_l1: shape mismatch");
  Grid<T> out(u_tilde.height(), u_tilde.width(), u_tilde.channels());
  const double ag = alpha * gamma;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = u0.data()[i];
    out.data()[i] = static_cast<T>(shrink_toward(u_tilde.data()[i], a, ag * w.data()[i]));
  }
  return out;
}

template <typename T>
CollabState<T> prox_data(const CollabState<T>& u_tilde, const DataAnchors<T>& anchors, const DataWeights& weights,
                         double alpha, DisparityWeight mode) {
  anchors.check(u_tilde, "prox_data");
  const std::size_t n = u_tilde.plane_size();
  CollabState<T> out(u_tilde.height(), u_tilde.width(), channel::kCount);
  const double m = weights.lambda * alpha;
  const double inv = 1.0 / (1.0 + m);
  for (int c = 0; c < channel::kColorCount; ++c) {
    const auto src = u_tilde.plane(c);
    const auto f = anchors.rgb.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>((src[i] + m * f[i]) * inv);
  }
  const auto uc = u_tilde.plane(channel::kConfidence);
  const auto ud = u_tilde.plane(channel::kDisparity);
  const auto c0 = anchors.confidence.plane(0);
  const auto d0 = anchors.disparity.plane(0);
  auto oc = out.plane(channel::kConfidence);
  auto od = out.plane(channel::kDisparity);
  const double conf_thr = alpha * weights.mu;
  const double disp_thr = alpha * weights.nu;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = disparity_weight(uc[i], c0[i], mode);
    od[i] = static_cast<T>(shrink_toward(ud[i], d0[i], disp_thr * w));
    oc[i] = static_cast<T>(shrink_toward(uc[i], c0[i], conf_thr));
  }
  return out;
}

template <typename T>
double data_energy(const CollabState<T>& u, const DataAnchors<T>& anchors, const DataWeights& weights,
                   DisparityWeight mode) {
  anchors.check(u, "data_energy");
  const std::size_t n = u.plane_size();
  double color = 0.0;
  for (int c = 0; c < channel::kColorCount; ++c) {
    const auto a = u.plane(c);
    const auto f = anchors.rgb.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = static_cast<double>(a[i]) - f[i];
      color += r * r;
    }
  }
  double conf = 0.0;
  double disp = 0.0;
  const auto uc = u.plane(channel::kConfidence);
  const auto ud = u.plane(channel::kDisparity);
  const auto c0 = anchors.confidence.plane(0);
  const auto d0 = anchors.disparity.plane(0);
  for (std::size_t i = 0; i < n; ++i) {
    conf += std::abs(static_cast<double>(uc[i]) - c0[i]);
    disp += disparity_weight(uc[i], c0[i], mode) * std::abs(static_cast<double>(ud[i]) - d0[i]);
  }
  return 0.5 * weights.lambda * color + weights.mu * conf + weights.nu * disp;
}

#define COLLABVN_INSTANTIATE(T)                                                                                \
  template struct DataAnchors<T>;                                                                              \
  template Grid<T> prox_l2<T>(const Grid<T>&, const Grid<T>&, double, double);                                 \
  template Grid<T> prox_weighted_l1<T>(const Grid<T>&, const Grid<T>&, const Grid<T>&, double, double);        \
  template CollabState<T> prox_data<T>(const CollabState<T>&, const DataAnchors<T>&, const DataWeights&, double, \
                                       DisparityWeight);                                                       \
  template double data_energy<T>(const CollabState<T>&, const DataAnchors<T>&, const DataWeights&, DisparityWeight);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
