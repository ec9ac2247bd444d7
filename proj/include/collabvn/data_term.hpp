#pragma once

#include <algorithm>
#include <cmath>

#include "collabvn/state.hpp"

namespace collabvn {

/// Weight of the disparity l1 fidelity inside the prox.
enum class DisparityWeight {
  kLaggedIterate,   // max(u_c, 0) of the state entering the prox
  kInputConfidence  // the fixed input confidence c
};

struct DataWeights {
  double lambda = 0.0;  // color
  double mu = 0.0;      // confidence
  double nu = 0.0;      // disparity
};

/// Anchors of the fidelity term, in the normalised state units.
template <typename T>
struct DataAnchors {
  Grid<T> rgb;         // f0, 3 channels
  Grid<T> disparity;   // d-check / (D - 1)
  Grid<T> confidence;  // c

  /// Splits an initial state u0 = (f0, d, c) into its anchors.
  static DataAnchors from_state(const CollabState<T>& u0);
  void check(const CollabState<T>& u, const char* what) const;
};

/// argmin_u lambda/2 |u - u0|^2 + |u - u_tilde|^2 / (2 alpha), elementwise.
template <typename T>
Grid<T> prox_l2(const Grid<T>& u_tilde, const Grid<T>& u0, double lambda, double alpha);

/// argmin_u gamma |u - u0|_{w,1} + |u - u_tilde|^2 / (2 alpha): soft shrinkage
/// toward u0 with per-pixel threshold alpha * gamma * w.
template <typename T>
Grid<T> prox_weighted_l1(const Grid<T>& u_tilde, const Grid<T>& u0, const Grid<T>& w, double gamma, double alpha);

template <typename T>
CollabState<T> prox_data(const CollabState<T>& u_tilde, const DataAnchors<T>& anchors, const DataWeights& weights,
                         double alpha, DisparityWeight mode = DisparityWeight::kLaggedIterate);

/// lambda/2 |u_rgb - f0|^2 + mu |u_c - c|_1 + nu |u_d - d|_{w,1}; w follows `mode`.
template <typename T>
double data_energy(const CollabState<T>& u, const DataAnchors<T>& anchors, const DataWeights& weights,
                   DisparityWeight mode = DisparityWeight::kLaggedIterate);

/// Scalar forms used by the closed-form proxes and their derivatives.
inline double shrink(double r, double threshold) noexcept {
  const double m = std::abs(r) - threshold;
  return m > 0.0 ? (r > 0.0 ? m : -m) : 0.0;
}

/// argmin_x t |x - anchor| + (x - v)^2 / 2. Written so that t = 0 returns v
/// and full shrinkage returns anchor exactly.
inline double shrink_toward(double v, double anchor, double t) noexcept {
  const double r = v - anchor;
  if (std::abs(r) <= t) return anchor;
  return r > 0.0 ? v - t : v + t;
}

inline double disparity_weight(double lagged_confidence, double input_confidence, DisparityWeight mode) noexcept {
  return mode == DisparityWeight::kLaggedIterate ? std::max(lagged_confidence, 0.0) : input_confidence;
}

}  // namespace collabvn
