#include "collabvn/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "collabvn/checkpoint.hpp"
#include "collabvn/dataset.hpp"
#include "collabvn/eval.hpp"
#include "collabvn/image_io.hpp"
#include "collabvn/parallel.hpp"
#include "collabvn/synthetic.hpp"
#include "collabvn/visualize.hpp"

namespace collabvn {

namespace {

namespace fs = std::filesystem;

struct Global {
  std::string precision = "f32";
  int threads = 1;
  std::uint64_t seed = 1;
};

struct MatchOpts {
  std::string left, right, backend = "census", features0, features1, out, out_right;
  int disparities = 0;
};

struct RefineOpts {
  std::string cost, cost_right, left, checkpoint, out, dump_steps, out_conf, data, out_dir;
  double eta = 0.075;
  double eps = 3.0;
};

struct TrainOpts {
  std::string data, out, loss_csv, resume, init = "default", weight = "lagged";
  int steps = 7, levels = 4, filters = 32, ksize = 5;
  int epochs = 300, crop = 0, batch = 1, save_every = 10;
  double lr = 1e-3, tau_switch = 0.5, tau_late = 3.0, delta = 1.0, eta = 0.075, eps = 3.0;
};

struct EvalOpts {
  std::string pred, gt, mask, metrics = "bad0.5,bad1,bad2,bad3,bad4,avg,rms", out, baseline;
};

struct InspectOpts {
  std::string checkpoint, out;
  int zoom = 4;
};

struct SynthOpts {
  std::string out;
  int count = 1;
  SyntheticConfig cfg;
};

fs::path sibling_with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path q = p;
  q.replace_extension();
  return q.string() + suffix;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_confidence(const Grid<float>& conf, const fs::path& path) {
  if (path.extension() == ".pfm") {
    write_pfm(conf, path);
  } else {
    write_png(conf, path);
  }
}

// ---- match ----

int cmd_match(const MatchOpts& o, std::ostream& out) {
  if (o.disparities < 2) throw ConfigError(fmt::format("--max-disp must be at least 2, got {}", o.disparities));
  std::optional<CostVolume<float>> left_vol, right_vol;
  if (o.backend == "census") {
    if (o.left.empty() || o.right.empty()) throw ConfigError("census backend needs --left and --right");
    const auto l = read_image(o.left);
    const auto r = read_image(o.right);
    if (!l.same_extent(r)) {
      throw DataError(fmt::format("left image {} and right image {} differ in size", shape_string(l), shape_string(r)));
    }
    left_vol = census_cost_volume(l, r, o.disparities, View::kLeft);
    if (!o.out_right.empty()) right_vol = census_cost_volume(l, r, o.disparities, View::kRight);
  } else {
    if (o.features0.empty() || o.features1.empty()) throw ConfigError("features backend needs --features0 and --features1");
    const auto f0 = read_feature_map(o.features0);
    const auto f1 = read_feature_map(o.features1);
    if (!f0.same_shape(f1)) throw DataError("feature maps differ in shape");
    left_vol = feature_cost_volume(f0, f1, o.disparities, View::kLeft);
    if (!o.out_right.empty()) right_vol = feature_cost_volume(f0, f1, o.disparities, View::kRight);
  }
  ensure_parent(o.out);
  write_cost_volume(*left_vol, o.out);
  out << fmt::format("wrote {} ({}x{}x{})\n", o.out, left_vol->height(), left_vol->width(), left_vol->disparities());
  if (right_vol) {
    ensure_parent(o.out_right);
    write_cost_volume(*right_vol, o.out_right);
    out << fmt::format("wrote {}\n", o.out_right);
  }
  return kExitOk;
}

// ---- refine ----

struct RefineInput {
  fs::path cost, cost_right, left, out, out_conf, dump;
};

template <typename T>
void refine_one(const RefineInput& in, const Checkpoint& ckpt, const InputConfig& icfg) {
  const auto cv = read_cost_volume(in.cost);
  const auto cvr = read_cost_volume(in.cost_right);
  const auto left = read_image(in.left);
  if (cv.disparities() != ckpt.disparities) {
    throw DataError(fmt::format("checkpoint expects D={} but cost volume '{}' is {}x{}x{}", ckpt.disparities,
                                in.cost.string(), cv.height(), cv.width(), cv.disparities()));
  }
  if (!cv.same_shape(cvr) || left.height() != cv.height() || left.width() != cv.width()) {
    throw DataError(fmt::format("shape mismatch: cost {}x{}x{}, right cost {}x{}x{}, image {}", cv.height(), cv.width(),
                                cv.disparities(), cvr.height(), cvr.width(), cvr.disparities(), shape_string(left)));
  }
  const auto inputs =
      build_inputs(left.template cast<T>(), volume_cast<float, T>(cv), volume_cast<float, T>(cvr), icfg);
  const auto result = vn_forward(init_state(inputs), ckpt.params, !in.dump.empty());
  ensure_parent(in.out);
  write_disparity(extract_disparity(result.output, inputs.disparities).template cast<float>(), in.out);
  if (!in.out_conf.empty()) {
    ensure_parent(in.out_conf);
    write_confidence(extract_confidence(result.output).template cast<float>(), in.out_conf);
  }
  if (!in.dump.empty()) {
    std::vector<CollabState<float>> traj;
    for (const auto& u : result.trajectory) traj.push_back(u.template cast<float>());
    dump_trajectory(traj, inputs.disparities, in.dump);
  }
}

template <typename T>
int cmd_refine(const RefineOpts& o, const Global& g, std::ostream& out) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  const InputConfig icfg{o.eta, o.eps};
  std::vector<RefineInput> jobs;
  if (!o.data.empty()) {
    if (o.out_dir.empty()) throw ConfigError("--data needs --out-dir");
    for (const auto& e : list_dataset(o.data)) {
      const auto name = e.dir.filename().string();
      const fs::path base = fs::path(o.out_dir) / name;
      jobs.push_back({e.cost, e.cost_right, e.left, base.string() + ".pfm",
                      o.out_conf.empty() ? fs::path{} : fs::path(base.string() + "_conf.pfm"),
                      o.dump_steps.empty() ? fs::path{} : fs::path(o.dump_steps) / name});
    }
  } else {
    if (o.cost.empty() || o.cost_right.empty() || o.left.empty() || o.out.empty()) {
      throw ConfigError("refine needs --cost, --cost-right, --left and --out (or --data and --out-dir)");
    }
    jobs.push_back({o.cost, o.cost_right, o.left, o.out, o.out_conf, o.dump_steps});
  }
  parallel_for(static_cast<int>(jobs.size()), g.threads, [&](int i) { refine_one<T>(jobs[i], ckpt, icfg); });
  out << fmt::format("refined {} image(s) with {}\n", jobs.size(), ckpt.params.arch.name());
  return kExitOk;
}

// ---- train ----

DisparityWeight parse_weight(const std::string& s) {
  if (s == "lagged") return DisparityWeight::kLaggedIterate;
  if (s == "input") return DisparityWeight::kInputConfidence;
  throw ConfigError(fmt::format("--disparity-weight must be lagged or input, got '{}'", s));
}

template <typename T>
int cmd_train(const TrainOpts& o, const Global& g, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.crop = o.crop;
  tc.batch = o.batch;
  tc.seed = g.seed;
  tc.threads = g.threads;
  tc.tau_switch = o.tau_switch;
  tc.tau_late = o.tau_late;
  tc.delta = o.delta;
  tc.adam.lr = o.lr;
  tc.validate();
  if (o.save_every < 1) throw ConfigError("--save-every must be positive");

  VnArchitecture arch;
  arch.steps = o.steps;
  arch.levels = o.levels;
  arch.filters = o.filters;
  arch.ksize = o.ksize;
  arch.weight_mode = parse_weight(o.weight);
  arch.validate();

  const auto entries = list_dataset(o.data);
  std::vector<TrainSample<T>> samples(entries.size());
  const InputConfig icfg{o.eta, o.eps};
  parallel_for(static_cast<int>(entries.size()), g.threads,
               [&](int i) { samples[i] = load_sample<T>(entries[i], icfg).sample; });
  const int disparities = samples.front().inputs.disparities;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].inputs.disparities != disparities) {
      throw DataError(fmt::format("{}: D={} differs from {} in {}", entries[i].cost.string(),
                                  samples[i].inputs.disparities, disparities, entries[0].cost.string()));
    }
  }

  TrainState state;
  if (!o.resume.empty()) {
    Checkpoint c = read_checkpoint(o.resume);
    const auto& a = c.params.arch;
    for (const auto& [flag, want, have] : {std::tuple{"--steps", o.steps, a.steps}, std::tuple{"--levels", o.levels, a.levels},
                                           std::tuple{"--filters", o.filters, a.filters},
                                           std::tuple{"--ksize", o.ksize, a.ksize}}) {
      if (sub.count(flag) && want != have) {
        throw ConfigError(fmt::format("{} {} conflicts with the resumed checkpoint ({})", flag, want, have));
      }
    }
    if (c.disparities != disparities) {
      throw DataError(fmt::format("resumed checkpoint has D={}, dataset has D={}", c.disparities, disparities));
    }
    state.params = std::move(c.params);
    state.adam = c.adam ? std::move(*c.adam) : AdamState::zeros_like(state.params);
    state.epoch = c.epoch;
  } else {
    if (o.init == "zero") {
      state.params = make_zero_params(arch);
    } else if (o.init == "default") {
      state.params = make_initial_params(arch, g.seed);
    } else {
      throw ConfigError(fmt::format("--init must be default or zero, got '{}'", o.init));
    }
    state.adam = AdamState::zeros_like(state.params);
  }

  const fs::path ckpt_path = o.out;
  const fs::path csv_path = o.loss_csv.empty() ? sibling_with_suffix(ckpt_path, ".loss.csv") : fs::path(o.loss_csv);
  ensure_parent(ckpt_path);
  ensure_parent(csv_path);
  const bool append = !o.resume.empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError(fmt::format("cannot write '{}'", csv_path.string()));
  if (!append) csv << "epoch,loss,tau\n";

  auto save = [&](const TrainState& s) {
    write_checkpoint(Checkpoint{s.params, disparities, s.epoch, s.adam}, ckpt_path);
  };
  out << fmt::format("training {} on {} samples, epochs {}..{}\n", state.params.arch.name(), samples.size(),
                     state.epoch, tc.epochs);
  try {
    train_loop(samples, state, tc, [&](const TrainState& s, const EpochLog& l) {
      csv << fmt::format("{},{:.9g},{}\n", l.epoch, l.loss, l.tau) << std::flush;
      out << fmt::format("epoch {:4} loss {:.6f} tau {}\n", l.epoch, l.loss, l.tau);
      if (s.epoch % o.save_every == 0) save(s);
    });
  } catch (const TrainingAborted& e) {
    save(e.last_good());
    err << fmt::format("error: {}; last good state (epoch {}) written to {}\n", e.what(), e.last_good().epoch,
                       ckpt_path.string());
    return kExitNumerical;
  }
  save(state);
  out << fmt::format("wrote {} and {}\n", ckpt_path.string(), csv_path.string());
  return kExitOk;
}

// ---- eval ----

std::vector<std::string> parse_metrics(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (!is_metric_name(item)) {
      throw ConfigError(fmt::format("unknown metric '{}' (known: {})", item, fmt::join(metric_names(), ",")));
    }
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("--metrics selects no metric");
  return out;
}

int cmd_eval(const EvalOpts& o, std::ostream& out) {
  const auto metrics = parse_metrics(o.metrics);
  Mask valid;
  const auto gt = read_disparity(o.gt, &valid);
  MaskKind kind = MaskKind::kOcc;
  if (!o.mask.empty()) {
    const Mask m = read_mask(o.mask);
    if (!m.same_extent(gt)) {
      throw DataError(fmt::format("mask {} does not match ground truth {}", shape_string(m), shape_string(gt)));
    }
    for (std::size_t i = 0; i < valid.size(); ++i) valid.data()[i] = valid.data()[i] && m.data()[i];
    kind = MaskKind::kNoc;
  }
  auto report_for = [&](const std::string& path) {
    const auto pred = read_disparity(path);
    if (!pred.same_shape(gt)) {
      throw DataError(fmt::format("prediction '{}' is {} but ground truth is {}", path, shape_string(pred),
                                  shape_string(gt)));
    }
    return evaluate(pred, gt, valid, kind);
  };
  const MetricReport report = report_for(o.pred);
  out << render_report_text(report, metrics);
  std::string csv = render_report_csv(report, metrics);
  if (!o.baseline.empty()) {
    const auto deltas = compare_report(report_for(o.baseline), report, metrics);
    out << '\n' << render_delta_text(deltas);
    csv = render_delta_csv(deltas);
  }
  if (!o.out.empty()) {
    ensure_parent(o.out);
    std::ofstream f(o.out);
    f << csv;
    if (!f) throw DataError(fmt::format("cannot write '{}'", o.out));
  }
  return kExitOk;
}

// ---- inspect ----

int cmd_inspect(const InspectOpts& o, std::ostream& out) {
  const Checkpoint c = read_checkpoint(o.checkpoint);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const auto& a = c.params.arch;
  out << fmt::format("{}: T={} L={} K={} kernel {}x{} B={} D={} epoch {}{}\n", a.name(), a.steps, a.levels, a.filters,
                     a.ksize, a.ksize, a.rbf.count, c.disparities, c.epoch, c.adam ? " (with optimizer state)" : "");
  int files = 0;
  for (int t = 0; t < a.steps; ++t) {
    const auto& step = c.params.steps[t];
    out << fmt::format("  step {}: lambda {:.4g} mu {:.4g} nu {:.4g} alpha {:.4g}\n", t, step.data.lambda,
                       step.data.mu, step.data.nu, step.alpha);
    for (int l = 0; l < a.levels; ++l) {
      const auto& lv = step.regularizer.levels[l];
      const auto base = dir / fmt::format("step{:02}_level{}", t, l);
      write_png(filter_mosaic(lv.filters, o.zoom), base.string() + "_filters.png");
      const auto samples = sample_activation(lv.activation);
      write_activation_csv(samples, base.string() + "_activation.csv");
      write_png(plot_curves(samples.s, samples.rho), base.string() + "_rho.png");
      write_png(plot_curves(samples.s, samples.phi), base.string() + "_phi.png");
      files += 4;
    }
  }
  out << fmt::format("wrote {} files to {}\n", files, dir.string());
  return kExitOk;
}

// ---- synth ----

int cmd_synth(const SynthOpts& o, const Global& g, std::ostream& out) {
  write_synthetic_dataset(o.out, o.count, o.cfg, g.seed);
  out << fmt::format("wrote {} synthetic pairs to {}\n", o.count, o.out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collaborative variational refinement of stereo disparity maps", "collabvn"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--precision", g.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Random seed");

  MatchOpts mo;
  auto* match = app.add_subcommand("match", "Compute matching cost volumes");
  match->add_option("--left", mo.left, "Left image");
  match->add_option("--right", mo.right, "Right image");
  match->add_option("--max-disp", mo.disparities, "Number of disparity candidates D")->required();
  match->add_option("--backend", mo.backend)->check(CLI::IsMember({"census", "features"}));
  match->add_option("--features0", mo.features0, "FMAP1 features of the left image");
  match->add_option("--features1", mo.features1, "FMAP1 features of the right image");
  match->add_option("--out", mo.out, "Left-reference volume (CVOL1)")->required();
  match->add_option("--out-right", mo.out_right, "Right-reference volume for the LR check");

  RefineOpts ro;
  auto* refine = app.add_subcommand("refine", "Refine a disparity map with a trained network");
  refine->add_option("--cost", ro.cost, "Left-reference cost volume");
  refine->add_option("--cost-right", ro.cost_right, "Right-reference cost volume");
  refine->add_option("--left", ro.left, "Left image");
  refine->add_option("--checkpoint", ro.checkpoint)->required();
  refine->add_option("--eta", ro.eta, "Softmax temperature")->check(CLI::PositiveNumber);
  refine->add_option("--eps", ro.eps, "LR-check distance at which occlusion becomes certain")->check(CLI::PositiveNumber);
  refine->add_option("--out", ro.out, "Refined disparity (.pfm or Kitti .png)");
  refine->add_option("--out-conf", ro.out_conf, "Refined confidence (.pfm or .png)");
  refine->add_option("--dump-steps", ro.dump_steps, "Directory for per-step images");
  refine->add_option("--data", ro.data, "Refine every sample of a dataset directory");
  refine->add_option("--out-dir", ro.out_dir, "Output directory for --data");

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Train the network on a dataset directory");
  train->add_option("--data", to.data)->required();
  train->add_option("--out", to.out, "Checkpoint path")->required();
  train->add_option("--steps", to.steps);
  train->add_option("--levels", to.levels);
  train->add_option("--filters", to.filters);
  train->add_option("--ksize", to.ksize);
  train->add_option("--epochs", to.epochs);
  train->add_option("--lr", to.lr);
  train->add_option("--crop", to.crop, "Random square crop side (0 = full images)");
  train->add_option("--batch", to.batch);
  train->add_option("--tau-switch", to.tau_switch, "Epoch fraction after which the loss is truncated");
  train->add_option("--tau-late", to.tau_late);
  train->add_option("--huber-delta", to.delta);
  train->add_option("--eta", to.eta);
  train->add_option("--eps", to.eps);
  train->add_option("--init", to.init)->check(CLI::IsMember({"default", "zero"}));
  train->add_option("--disparity-weight", to.weight)->check(CLI::IsMember({"lagged", "input"}));
  train->add_option("--loss-csv", to.loss_csv);
  train->add_option("--resume", to.resume, "Continue from a checkpoint");
  train->add_option("--save-every", to.save_every, "Checkpoint interval in epochs");

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "Compute error metrics of a disparity map");
  eval->add_option("--pred", eo.pred)->required();
  eval->add_option("--gt", eo.gt)->required();
  eval->add_option("--mask", eo.mask, "Non-occlusion mask (noc evaluation)");
  eval->add_option("--metrics", eo.metrics);
  eval->add_option("--out", eo.out, "CSV report");
  eval->add_option("--baseline", eo.baseline, "Second prediction to compare against");

  InspectOpts io;
  auto* inspect = app.add_subcommand("inspect", "Visualize the filters and activations of a checkpoint");
  inspect->add_option("--checkpoint", io.checkpoint)->required();
  inspect->add_option("--out", io.out)->required();
  inspect->add_option("--zoom", io.zoom)->check(CLI::PositiveNumber);

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Write a synthetic stereo dataset");
  synth->add_option("--out", so.out)->required();
  synth->add_option("--count", so.count);
  synth->add_option("--height", so.cfg.height);
  synth->add_option("--width", so.cfg.width);
  synth->add_option("--max-disparity", so.cfg.max_disparity);
  synth->add_option("--disparities", so.cfg.disparities);
  synth->add_option("--outliers", so.cfg.outlier_fraction);
  synth->add_option("--noise", so.cfg.noise);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    g.threads = resolve_threads(g.threads);
    const bool f64 = g.precision == "f64";
    if (*match) return cmd_match(mo, out);
    if (*refine) return f64 ? cmd_refine<double>(ro, g, out) : cmd_refine<float>(ro, g, out);
    if (*train) return f64 ? cmd_train<double>(to, g, *train, out, err) : cmd_train<float>(to, g, *train, out, err);
    if (*eval) return cmd_eval(eo, out);
    if (*inspect) return cmd_inspect(io, out);
    if (*synth) return cmd_synth(so, g, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace collabvn
