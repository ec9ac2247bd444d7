#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "collabvn/cost_volume.hpp"
#include "collabvn/data_term.hpp"
#include "collabvn/regularizer.hpp"

namespace collabvn {

/// Shape of a network VN^{T,k}_L: T steps, L pyramid levels, K filters of
/// side k per level.
struct VnArchitecture {
  int steps = 7;
  int levels = 4;
  int filters = 32;
  int ksize = 5;
  RbfBasis rbf;
  std::array<double, 5> blur = PyramidConfig{}.taps;
  DisparityWeight weight_mode = DisparityWeight::kLaggedIterate;

  PyramidConfig pyramid() const { return {levels, blur}; }
  std::string name() const;
  void validate() const;
};

struct StepParams {
  RegularizerParams regularizer;
  DataWeights data;
  double alpha = 0.0;
};

struct VnParams {
  VnArchitecture arch;
  std::vector<StepParams> steps;

  void validate() const;
};

/// Every learnable quantity zero, so the network is the identity.
VnParams make_zero_params(const VnArchitecture& arch);

/// Random zero-mean filters of norm 1/sqrt(K), activations fitted to
/// rho(s) = s on the RBF range, moderate data weights and step sizes.
VnParams make_initial_params(const VnArchitecture& arch, std::uint64_t seed);

struct InitialWeights {
  double lambda = 1.0;
  double mu = 1.0;
  double nu = 1.0;
  double alpha = 0.1;
};

/// Same as make_initial_params with explicit data weights and step size.
VnParams make_initial_params(const VnArchitecture& arch, std::uint64_t seed, const InitialWeights& w);

/// u0 = (f0, d / (D - 1), c).
template <typename T>
CollabState<T> init_state(const RefinementInputs<T>& inputs);

/// u_{t+1} = prox_{alpha D}(u_t - alpha grad R(u_t)).
template <typename T>
CollabState<T> vn_step(const CollabState<T>& u, const DataAnchors<T>& anchors, const StepParams& step,
                       DisparityWeight mode);

template <typename T>
struct VnResult {
  CollabState<T> output;
  std::vector<CollabState<T>> trajectory;  // u0 .. uT when recorded, empty otherwise
};

/// Runs all T steps from u0, which also supplies the data anchors.
template <typename T>
VnResult<T> vn_forward(const CollabState<T>& u0, const VnParams& params, bool record = false);

/// Disparity in pixels, u_d * (D - 1) clamped to [0, D - 1]. The product is
/// formed in double precision.
template <typename T>
Grid<T> extract_disparity(const CollabState<T>& u, int disparities);

/// Confidence channel clamped to [0, 1].
template <typename T>
Grid<T> extract_confidence(const CollabState<T>& u);

}  // namespace collabvn
