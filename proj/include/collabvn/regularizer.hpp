#pragma once

#include <functional>
#include <span>
#include <vector>

#include "collabvn/conv.hpp"
#include "collabvn/pyramid.hpp"
#include "collabvn/state.hpp"

namespace collabvn {

/// Regularly spaced Gaussian means on [-range, range]. The bandwidth defaults
/// to the spacing between neighbouring means.
struct RbfBasis {
  int count = 63;
  double range = 3.0;
  double sigma = 0.0;  // <= 0 selects the mean spacing

  double spacing() const noexcept { return count > 1 ? 2.0 * range / (count - 1) : 2.0 * range; }
  double bandwidth() const noexcept { return sigma > 0.0 ? sigma : spacing(); }
  double mean(int b) const noexcept { return -range + b * spacing(); }
  void validate() const;
};

/// One table of K activation functions
/// rho_k(s) = beta_k * sum_b w_kb * exp(-(s - gamma_b)^2 / (2 sigma^2)).
struct RbfActivation {
  RbfBasis basis;
  int filters = 0;
  std::vector<double> weights;  // K x B, row-major
  std::vector<double> beta;     // K

  RbfActivation() = default;
  RbfActivation(const RbfBasis& basis, int filters);

  std::span<double> row(int k) noexcept {
    return {weights.data() + static_cast<std::size_t>(k) * basis.count, static_cast<std::size_t>(basis.count)};
  }
  std::span<const double> row(int k) const noexcept {
    return {weights.data() + static_cast<std::size_t>(k) * basis.count, static_cast<std::size_t>(basis.count)};
  }
};

/// rho_k(s).
double rbf_eval(const RbfActivation& act, int k, double s);

/// d rho_k / ds.
double rbf_derivative(const RbfActivation& act, int k, double s);

/// phi_k(s), the antiderivative of rho_k with phi_k(0) = 0.
double rbf_integral(const RbfActivation& act, int k, double s);

/// Elementwise rho, and optionally rho', over a plane of responses for filter k.
/// Gaussians beyond eight bandwidths are dropped (relative error ~1e-14).
template <typename T>
void rbf_eval(const RbfActivation& act, int k, std::span<const T> s, std::span<T> rho, std::span<T> drho = {});

/// Accumulates sum_x q(x) * g_b(s(x)) into `out[b]` for every basis function b.
template <typename T>
void rbf_basis_dot(const RbfBasis& basis, std::span<const T> s, std::span<const T> q, std::span<double> out);

/// Least-squares weights (unscaled, beta = 1) for which the RBF expansion
/// approximates `target` on [-range, range].
std::vector<double> fit_rbf(const RbfBasis& basis, const std::function<double(double)>& target,
                            int samples = 2001);

/// Largest |rho_k'| over the support, sampled densely.
double rbf_max_slope(const RbfActivation& act, int k);

struct LevelParams {
  FilterBank filters;  // K x 5 x k x k
  RbfActivation activation;
};

/// Multi-scale Fields-of-Experts prior R(u) = sum_l sum_k sum_x phi_kl((K_kl A_l u)(x)).
struct RegularizerParams {
  PyramidConfig pyramid;
  std::vector<LevelParams> levels;

  int filters() const noexcept { return levels.empty() ? 0 : levels.front().filters.filters(); }
  int ksize() const noexcept { return levels.empty() ? 0 : levels.front().filters.ksize(); }
  void validate() const;
};

template <typename T>
double foe_energy(const CollabState<T>& u, const RegularizerParams& params);

template <typename T>
CollabState<T> foe_grad(const CollabState<T>& u, const RegularizerParams& params);

/// Upper bound estimate of the Lipschitz constant of foe_grad: the largest
/// activation slope times the power-iteration norm of sum_l A_l^T K_l^T K_l A_l
/// on a `height` x `width` grid.
double foe_lipschitz(const RegularizerParams& params, int height, int width, int iterations = 50,
                     unsigned seed = 1);

}  // namespace collabvn
