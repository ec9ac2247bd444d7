#include "collabvn/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "collabvn/parallel.hpp"

namespace collabvn {

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? r * r / (2.0 * delta) : a - 0.5 * delta;
}

double huber_derivative(double r, double delta) {
  if (std::abs(r) <= delta) return r / delta;
  return r > 0.0 ? 1.0 : -1.0;
}

template <typename T>
double truncated_huber_loss(const Grid<T>& pred, const Grid<T>& gt, const Mask& valid, double delta, double tau,
                            Grid<T>* grad) {
  if (!(delta > 0.0)) throw ConfigError(fmt::format("Huber delta must be positive, got {}", delta));
  if (!(tau > 0.0)) throw ConfigError(fmt::format("truncation must be positive, got {}", tau));
  if (!pred.same_shape(gt) || pred.channels() != 1 || !pred.same_extent(valid)) {
    throw ConfigError(fmt::format("loss: prediction {} vs ground truth {} vs mask {}", shape_string(pred),
                                  shape_string(gt), shape_string(valid)));
  }
  if (grad) *grad = Grid<T>(pred.height(), pred.width());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid.data()[i]) continue;
    const double r = static_cast<double>(pred.data()[i]) - gt.data()[i];
    const double h = huber(r, delta);
    if (h < tau) {
      loss += h;
      if (grad) grad->data()[i] = static_cast<T>(huber_derivative(r, delta));
    } else {
      loss += tau;
    }
  }
  return loss;
}

// ---- gradient containers ----------------------------------------------------

namespace {

template <typename P, typename Block>
std::vector<Block> blocks_of(P& params) {
  std::vector<Block> out;
  const auto k = static_cast<std::uint32_t>(params.arch.filters);
  const auto ks = static_cast<std::uint32_t>(params.arch.ksize);
  for (std::size_t t = 0; t < params.steps.size(); ++t) {
    auto& step = params.steps[t];
    for (std::size_t l = 0; l < step.regularizer.levels.size(); ++l) {
      auto& lv = step.regularizer.levels[l];
      const std::string prefix = fmt::format("step{}/level{}/", t, l);
      const auto b = static_cast<std::uint32_t>(lv.activation.basis.count);
      out.push_back({prefix + "filters", {k, static_cast<std::uint32_t>(channel::kCount), ks, ks}, lv.filters.taps()});
      out.push_back({prefix + "rbf_weights", {k, b}, lv.activation.weights});
      out.push_back({prefix + "beta", {k}, lv.activation.beta});
    }
    const std::string prefix = fmt::format("step{}/", t);
    out.push_back({prefix + "lambda", {1}, {&step.data.lambda, 1}});
    out.push_back({prefix + "mu", {1}, {&step.data.mu, 1}});
    out.push_back({prefix + "nu", {1}, {&step.data.nu, 1}});
    out.push_back({prefix + "alpha", {1}, {&step.alpha, 1}});
  }
  return out;
}

}  // namespace

std::vector<ParamBlock> parameter_blocks(VnParams& params) { return blocks_of<VnParams, ParamBlock>(params); }

std::vector<ConstParamBlock> parameter_blocks(const VnParams& params) {
  return blocks_of<const VnParams, ConstParamBlock>(params);
}

GradientBundle GradientBundle::zeros_like(const VnParams& params) {
  GradientBundle g{params};
  for (auto& b : parameter_blocks(g.values)) std::fill(b.values.begin(), b.values.end(), 0.0);
  return g;
}

void GradientBundle::add(const GradientBundle& other) {
  auto mine = parameter_blocks(values);
  const auto theirs = parameter_blocks(other.values);
  if (mine.size() != theirs.size()) throw ConfigError("GradientBundle::add: layout mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].values.size() != theirs[i].values.size()) throw ConfigError("GradientBundle::add: block size mismatch");
    for (std::size_t j = 0; j < mine[i].values.size(); ++j) mine[i].values[j] += theirs[i].values[j];
  }
}

void GradientBundle::scale(double s) {
  for (auto& b : parameter_blocks(values)) {
    for (double& v : b.values) v *= s;
  }
}

bool GradientBundle::all_finite() const {
  for (const auto& b : parameter_blocks(values)) {
    for (double v : b.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---- reverse mode ----------------------------------------------------------

namespace {

// Rewrites `du` from d/du_{t+1} to d/du_t and accumulates the parameter
// derivatives of step t into `g`.
template <typename T>
void step_backward(const CollabState<T>& u, const DataAnchors<T>& anchors, const StepParams& p, DisparityWeight mode,
                   CollabState<T>& du, StepParams& g) {
  const auto& reg = p.regularizer;
  const int h = u.height();
  const int w = u.width();
  const int levels = static_cast<int>(reg.levels.size());
  const auto shapes = level_shapes(h, w, levels);
  const double alpha = p.alpha;

  std::vector<Grid<T>> z(levels), s(levels), rho(levels), drho(levels);
  CollabState<T> grad(h, w, channel::kCount);
  {
    Grid<T> cur = u;
    for (int l = 0; l < levels; ++l) {
      if (l > 0) cur = downsample_blur(cur, reg.pyramid);
      const auto& lv = reg.levels[l];
      z[l] = cur;
      s[l] = conv2d(cur, lv.filters);
      rho[l] = Grid<T>(s[l].height(), s[l].width(), s[l].channels());
      drho[l] = Grid<T>(s[l].height(), s[l].width(), s[l].channels());
      for (int k = 0; k < lv.filters.filters(); ++k) {
        rbf_eval<T>(lv.activation, k, s[l].plane(k), rho[l].plane(k), drho[l].plane(k));
      }
      Grid<T> back = conv2d_adjoint(rho[l], lv.filters);
      for (int lvl = l; lvl > 0; --lvl) {
        back = upsample_sharpen(back, reg.pyramid, shapes[lvl - 1].first, shapes[lvl - 1].second);
      }
      axpy(grad, 1.0, back);
    }
  }
  CollabState<T> ut = u;
  axpy(ut, -alpha, grad);

  // prox
  CollabState<T> dut(h, w, channel::kCount);
  const std::size_t n = u.plane_size();
  const double m = p.data.lambda * alpha;
  const double inv = 1.0 / (1.0 + m);
  double dm = 0.0;
  for (int c = 0; c < channel::kColorCount; ++c) {
    const auto src = ut.plane(c);
    const auto f = anchors.rgb.plane(c);
    const auto d_out = du.plane(c);
    auto d_in = dut.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      d_in[i] = static_cast<T>(d_out[i] * inv);
      dm += static_cast<double>(d_out[i]) * (static_cast<double>(f[i]) - src[i]) * inv * inv;
    }
  }
  double dconf_thr = 0.0;
  double ddisp_thr = 0.0;  // derivative w.r.t. nu * alpha, weighted per pixel
  double dnu = 0.0;
  double dalpha = 0.0;
  {
    const auto uc = ut.plane(channel::kConfidence);
    const auto ud = ut.plane(channel::kDisparity);
    const auto c0 = anchors.confidence.plane(0);
    const auto d0 = anchors.disparity.plane(0);
    const auto gc = du.plane(channel::kConfidence);
    const auto gd = du.plane(channel::kDisparity);
    auto dc = dut.plane(channel::kConfidence);
    auto dd = dut.plane(channel::kDisparity);
    const double conf_thr = alpha * p.data.mu;
    const double disp_scale = alpha * p.data.nu;
    for (std::size_t i = 0; i < n; ++i) {
      const double rc = static_cast<double>(uc[i]) - c0[i];
      double dci = 0.0;
      if (std::abs(rc) > conf_thr) {
        dci = gc[i];
        dconf_thr -= (rc > 0.0 ? 1.0 : -1.0) * gc[i];
      }
      const double wgt = disparity_weight(uc[i], c0[i], mode);
      const double rd = static_cast<double>(ud[i]) - d0[i];
      double ddi = 0.0;
      if (std::abs(rd) > disp_scale * wgt) {
        ddi = gd[i];
        const double dthr = -(rd > 0.0 ? 1.0 : -1.0) * gd[i];
        dnu += alpha * wgt * dthr;
        ddisp_thr += p.data.nu * wgt * dthr;
        if (mode == DisparityWeight::kLaggedIterate && uc[i] > T(0)) dci += disp_scale * dthr;
      }
      dc[i] = static_cast<T>(dci);
      dd[i] = static_cast<T>(ddi);
    }
  }
  g.data.lambda += alpha * dm;
  g.data.mu += alpha * dconf_thr;
  g.data.nu += dnu;
  dalpha += p.data.lambda * dm + p.data.mu * dconf_thr + ddisp_thr;

  // gradient step u_tilde = u - alpha * grad R(u)
  dalpha -= dot(dut, grad);
  g.alpha += dalpha;
  du = dut;
  if (alpha == 0.0) return;
  CollabState<T> v = dut;
  for (T& x : v.data()) x = static_cast<T>(-alpha * x);
  Grid<T> vl = v;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) vl = downsample_blur(vl, reg.pyramid);
    const auto& lv = reg.levels[l];
    auto& glv = g.regularizer.levels[l];
    Grid<T> q = conv2d(vl, lv.filters);
    const int nb = lv.activation.basis.count;
    std::vector<double> bd(nb);
    for (int k = 0; k < lv.filters.filters(); ++k) {
      std::fill(bd.begin(), bd.end(), 0.0);
      rbf_basis_dot<T>(lv.activation.basis, s[l].plane(k), q.plane(k), bd);
      const auto wrow = lv.activation.row(k);
      auto gw = glv.activation.row(k);
      double db = 0.0;
      for (int b = 0; b < nb; ++b) {
        gw[b] += lv.activation.beta[k] * bd[b];
        db += wrow[b] * bd[b];
      }
      glv.activation.beta[k] += db;
    }
    conv2d_filter_grad(vl, rho[l], glv.filters);
    Grid<T>& qd = q;
    for (std::size_t i = 0; i < qd.size(); ++i) qd.data()[i] *= drho[l].data()[i];
    conv2d_filter_grad(z[l], qd, glv.filters);
    Grid<T> back = conv2d_adjoint(qd, lv.filters);
    for (int lvl = l; lvl > 0; --lvl) {
      back = upsample_sharpen(back, reg.pyramid, shapes[lvl - 1].first, shapes[lvl - 1].second);
    }
    axpy(du, 1.0, back);
  }
}

}  // namespace

template <typename T>
GradientBundle vn_backward(const std::vector<CollabState<T>>& trajectory, const VnParams& params,
                           const Grid<T>& loss_grad) {
  if (trajectory.size() != params.steps.size() + 1) {
    throw ConfigError(fmt::format("vn_backward: trajectory holds {} states for {} steps", trajectory.size(),
                                  params.steps.size()));
  }
  const auto& u0 = trajectory.front();
  if (!u0.same_extent(loss_grad) || loss_grad.channels() != 1) {
    throw ConfigError(fmt::format("vn_backward: loss gradient {} does not match state {}", shape_string(loss_grad),
                                  shape_string(u0)));
  }
  const auto anchors = DataAnchors<T>::from_state(u0);
  GradientBundle g = GradientBundle::zeros_like(params);
  CollabState<T> du(u0.height(), u0.width(), channel::kCount);
  du.set_channel(channel::kDisparity, loss_grad);
  for (int t = static_cast<int>(params.steps.size()) - 1; t >= 0; --t) {
    step_backward(trajectory[t], anchors, params.steps[t], params.arch.weight_mode, du, g.values.steps[t]);
  }
  return g;
}

// ---- constraint set and optimizer -------------------------------------------

void project_theta(VnParams& params) {
  for (auto& step : params.steps) {
    for (auto& lv : step.regularizer.levels) {
      for (int k = 0; k < lv.filters.filters(); ++k) {
        auto taps = lv.filters.kernel(k);
        const double mean = std::accumulate(taps.begin(), taps.end(), 0.0) / static_cast<double>(taps.size());
        double norm = 0.0;
        for (double& t : taps) {
          t -= mean;
          norm += t * t;
        }
        norm = std::sqrt(norm);
        if (norm > 1.0) {
          for (double& t : taps) t /= norm;
        }
      }
      for (int k = 0; k < lv.activation.filters; ++k) {
        auto row = lv.activation.row(k);
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 1.0) {
          for (double& v : row) v /= norm;
        }
      }
    }
    step.data.lambda = std::max(step.data.lambda, 0.0);
    step.data.mu = std::max(step.data.mu, 0.0);
    step.data.nu = std::max(step.data.nu, 0.0);
    step.alpha = std::max(step.alpha, kMinStepSize);
  }
}

AdamState AdamState::zeros_like(const VnParams& params) {
  AdamState s;
  for (const auto& b : parameter_blocks(params)) {
    s.m.emplace_back(b.values.size(), 0.0);
    s.v.emplace_back(b.values.size(), 0.0);
  }
  return s;
}

void projected_block_adam(VnParams& params, const GradientBundle& grads, AdamState& state, const AdamConfig& cfg) {
  auto blocks = parameter_blocks(params);
  const auto gblocks = parameter_blocks(grads.values);
  if (state.m.empty() && state.v.empty()) state = AdamState::zeros_like(params);
  if (gblocks.size() != blocks.size() || state.m.size() != blocks.size() || state.v.size() != blocks.size()) {
    throw ConfigError("projected_block_adam: parameter, gradient and optimizer layouts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = gblocks[i].values;
    auto x = blocks[i].values;
    if (m.size() != x.size() || v.size() != x.size() || g.size() != x.size()) {
      throw ConfigError(fmt::format("projected_block_adam: block '{}' size mismatch", blocks[i].name));
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      denom += std::sqrt(v[j] / c2);
    }
    denom = denom / static_cast<double>(x.size()) + cfg.eps;
    const double step = cfg.lr / (c1 * denom);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= step * m[j];
  }
  project_theta(params);
}

// ---- training loop ------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError(fmt::format("epochs must be non-negative, got {}", epochs));
  if (!(adam.lr > 0.0)) throw ConfigError(fmt::format("learning rate must be positive, got {}", adam.lr));
  if (!(delta > 0.0)) throw ConfigError(fmt::format("Huber delta must be positive, got {}", delta));
  if (!(tau_late > 0.0)) throw ConfigError(fmt::format("truncation must be positive, got {}", tau_late));
  if (crop < 0) throw ConfigError("crop size must be non-negative");
  if (batch < 1) throw ConfigError("batch size must be at least 1");
}

double TrainConfig::tau_at(int epoch) const {
  return epoch >= tau_switch * epochs ? tau_late : kNoTruncation;
}

template <typename T>
double sample_loss(const TrainSample<T>& sample, const VnParams& params, double delta, double tau,
                   GradientBundle* grads, std::size_t* valid_count) {
  const CollabState<T> u0 = init_state(sample.inputs);
  const auto fwd = vn_forward(u0, params, grads != nullptr);
  const double scale = sample.inputs.scale();
  Grid<T> pred = fwd.output.channel(channel::kDisparity);
  for (T& v : pred.data()) v = static_cast<T>(static_cast<double>(v) * scale);
  Grid<T> dpred;
  const double loss = truncated_huber_loss(pred, sample.ground_truth, sample.valid, delta, tau,
                                           grads ? &dpred : nullptr);
  if (valid_count) {
    *valid_count = static_cast<std::size_t>(std::count_if(sample.valid.data().begin(), sample.valid.data().end(),
                                                          [](std::uint8_t v) { return v != 0; }));
  }
  if (grads) {
    for (T& v : dpred.data()) v = static_cast<T>(static_cast<double>(v) * scale);
    *grads = vn_backward(fwd.trajectory, params, dpred);
  }
  return loss;
}

namespace {

template <typename T>
TrainSample<T> crop_sample(const TrainSample<T>& s, int y0, int x0, int h, int w) {
  return {s.inputs.crop(y0, x0, h, w), crop_grid(s.ground_truth, y0, x0, h, w), crop_grid(s.valid, y0, x0, h, w)};
}

template <typename T>
void check_sample(const TrainSample<T>& s, std::size_t index) {
  s.inputs.validate();
  if (!s.ground_truth.same_extent(s.inputs.disparity) || !s.valid.same_extent(s.inputs.disparity) ||
      s.ground_truth.channels() != 1 || s.valid.channels() != 1) {
    throw DataError(fmt::format("sample {}: ground truth {} / mask {} do not match inputs {}", index,
                                shape_string(s.ground_truth), shape_string(s.valid), shape_string(s.inputs.disparity)));
  }
}

struct ItemResult {
  double loss = 0.0;
  std::size_t count = 0;
  GradientBundle grads;
};

}  // namespace

template <typename T>
std::vector<EpochLog> train_loop(const std::vector<TrainSample<T>>& dataset, TrainState& state, const TrainConfig& cfg,
                                 const std::function<void(const TrainState&, const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training set is empty");
  state.params.validate();
  for (std::size_t i = 0; i < dataset.size(); ++i) check_sample(dataset[i], i);
  if (state.adam.m.empty()) state.adam = AdamState::zeros_like(state.params);

  std::vector<EpochLog> log;
  const int n = static_cast<int>(dataset.size());
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const double tau = cfg.tau_at(epoch);
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int items = std::min(cfg.batch, n - start);
      std::vector<std::array<int, 4>> windows(items);
      for (int i = 0; i < items; ++i) {
        const auto& s = dataset[order[start + i]];
        const int h = s.ground_truth.height();
        const int w = s.ground_truth.width();
        const int ch = cfg.crop > 0 ? std::min(cfg.crop, h) : h;
        const int cw = cfg.crop > 0 ? std::min(cfg.crop, w) : w;
        const int y0 = std::uniform_int_distribution<int>(0, h - ch)(rng);
        const int x0 = std::uniform_int_distribution<int>(0, w - cw)(rng);
        windows[i] = {y0, x0, ch, cw};
      }
      std::vector<ItemResult> results(items);
      parallel_for(items, cfg.threads, [&](int i) {
        const auto& s = dataset[order[start + i]];
        const auto& win = windows[i];
        const bool whole = win[2] == s.ground_truth.height() && win[3] == s.ground_truth.width();
        auto& r = results[i];
        if (whole) {
          r.loss = sample_loss(s, state.params, cfg.delta, tau, &r.grads, &r.count);
        } else {
          r.loss = sample_loss(crop_sample(s, win[0], win[1], win[2], win[3]), state.params, cfg.delta, tau,
                               &r.grads, &r.count);
        }
      });
      double batch_loss = 0.0;
      std::size_t batch_count = 0;
      GradientBundle total = GradientBundle::zeros_like(state.params);
      for (const auto& r : results) {
        batch_loss += r.loss;
        batch_count += r.count;
        total.add(r.grads);
      }
      if (!std::isfinite(batch_loss) || !total.all_finite()) {
        throw TrainingAborted(fmt::format("non-finite loss or gradient in epoch {}", epoch), state);
      }
      epoch_loss += batch_loss;
      epoch_count += batch_count;
      if (batch_count == 0) continue;
      total.scale(1.0 / static_cast<double>(batch_count));
      TrainState before = state;
      projected_block_adam(state.params, total, state.adam, cfg.adam);
      for (const auto& b : parameter_blocks(state.params)) {
        for (double v : b.values) {
          if (!std::isfinite(v)) {
            throw TrainingAborted(fmt::format("non-finite parameter '{}' in epoch {}", b.name, epoch),
                                  std::move(before));
          }
        }
      }
    }
    state.epoch = epoch + 1;
    EpochLog entry{epoch, epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0, tau};
    log.push_back(entry);
    if (on_epoch) on_epoch(state, entry);
  }
  return log;
}

#define COLLABVN_INSTANTIATE(T)                                                                                  \
  template double truncated_huber_loss<T>(const Grid<T>&, const Grid<T>&, const Mask&, double, double, Grid<T>*); \
  template GradientBundle vn_backward<T>(const std::vector<CollabState<T>>&, const VnParams&, const Grid<T>&);   \
  template double sample_loss<T>(const TrainSample<T>&, const VnParams&, double, double, GradientBundle*,         \
                                 std::size_t*);                                                                  \
  template std::vector<EpochLog> train_loop<T>(const std::vector<TrainSample<T>>&, TrainState&, const TrainConfig&, \
                                               const std::function<void(const TrainState&, const EpochLog&)>&);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
