#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "collabvn/vn.hpp"

namespace collabvn {

/// r^2 / (2 delta) for |r| <= delta, |r| - delta / 2 beyond.
double huber(double r, double delta);
double huber_derivative(double r, double delta);

/// sum over valid pixels of min(huber(pred - gt), tau). When `grad` is given
/// it receives d loss / d pred (zero where truncated or invalid).
template <typename T>
double truncated_huber_loss(const Grid<T>& pred, const Grid<T>& gt, const Mask& valid, double delta, double tau,
                            Grid<T>* grad = nullptr);

constexpr double kNoTruncation = std::numeric_limits<double>::infinity();

/// d loss / d theta for every parameter block, stored in a parameter-shaped
/// container.
struct GradientBundle {
  VnParams values;

  static GradientBundle zeros_like(const VnParams& params);
  void add(const GradientBundle& other);
  void scale(double s);
  bool all_finite() const;
};

/// Reverse-mode pass through a recorded trajectory u0..uT. `loss_grad` is the
/// derivative of the loss w.r.t. the normalised disparity channel of uT.
/// The derivative of the lagged disparity weight max(u_c, 0) is propagated,
/// so the result is the exact gradient of the unrolled map away from kinks.
template <typename T>
GradientBundle vn_backward(const std::vector<CollabState<T>>& trajectory, const VnParams& params,
                           const Grid<T>& loss_grad);

/// Named view of one parameter tensor.
template <typename V>
struct BasicParamBlock {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::span<V> values;
};
using ParamBlock = BasicParamBlock<double>;
using ConstParamBlock = BasicParamBlock<const double>;

/// Blocks in a fixed order: per step, per level filters [K,5,k,k],
/// rbf_weights [K,B], beta [K]; then the step's lambda, mu, nu, alpha.
std::vector<ParamBlock> parameter_blocks(VnParams& params);
std::vector<ConstParamBlock> parameter_blocks(const VnParams& params);

inline constexpr double kMinStepSize = 1e-6;

/// Orthogonal projection onto the constraint set: zero-mean kernels inside the
/// unit ball, RBF weight rows inside the unit ball, lambda, mu, nu >= 0 and
/// alpha >= 1e-6. Beta is unconstrained.
void project_theta(VnParams& params);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const VnParams& params);
};

/// Adam moments per element; every element of a block shares the denominator
/// mean_block(sqrt(v_hat)) + eps. project_theta runs after the update.
void projected_block_adam(VnParams& params, const GradientBundle& grads, AdamState& state, const AdamConfig& cfg);

template <typename T>
struct TrainSample {
  RefinementInputs<T> inputs;
  Grid<T> ground_truth;  // pixels
  Mask valid;
};

struct TrainConfig {
  int epochs = 300;
  double tau_switch = 0.5;  // epoch fraction after which tau becomes `tau_late`
  double tau_late = 3.0;
  double delta = 1.0;
  int crop = 0;   // square crop side; 0 uses full samples
  int batch = 1;  // samples per optimizer step
  std::uint64_t seed = 0;
  int threads = 1;
  AdamConfig adam;

  void validate() const;
  double tau_at(int epoch) const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean truncated Huber per valid pixel
  double tau = kNoTruncation;
};

struct TrainState {
  VnParams params;
  AdamState adam;
  int epoch = 0;  // epochs completed
};

/// Thrown on a non-finite loss or gradient; carries the state before the
/// offending update.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, TrainState last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const TrainState& last_good() const noexcept { return last_good_; }

 private:
  TrainState last_good_;
};

/// Loss and gradient of one sample (full extent) under the given parameters.
template <typename T>
double sample_loss(const TrainSample<T>& sample, const VnParams& params, double delta, double tau,
                   GradientBundle* grads = nullptr, std::size_t* valid_count = nullptr);

/// Runs epochs state.epoch .. cfg.epochs - 1. `on_epoch` is called after each
/// epoch with the updated state.
template <typename T>
std::vector<EpochLog> train_loop(const std::vector<TrainSample<T>>& dataset, TrainState& state, const TrainConfig& cfg,
                                 const std::function<void(const TrainState&, const EpochLog&)>& on_epoch = {});

}  // namespace collabvn
