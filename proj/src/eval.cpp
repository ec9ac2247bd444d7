#include "collabvn/eval.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace collabvn {

const char* mask_kind_name(MaskKind kind) { return kind == MaskKind::kOcc ? "occ" : "noc"; }

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"bad0.5", "bad1", "bad2", "bad3", "bad4", "avg", "rms"};
  return names;
}

bool is_metric_name(const std::string& name) {
  const auto& n = metric_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

double MetricReport::metric(const std::string& name) const {
  if (name == "avg") return avg;
  if (name == "rms") return rms;
  for (std::size_t i = 0; i < kBadThresholds.size(); ++i) {
    if (name == metric_names()[i]) return bad[i];
  }
  throw ConfigError(fmt::format("unknown metric '{}'", name));
}

namespace {

void check_inputs(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid) {
  if (!pred.same_shape(gt) || pred.channels() != 1 || !pred.same_extent(valid) || valid.channels() != 1) {
    throw ConfigError(fmt::format("evaluation: prediction {} vs ground truth {} vs mask {}", shape_string(pred),
                                  shape_string(gt), shape_string(valid)));
  }
}

template <typename F>
std::size_t for_valid(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid, F&& f) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid.data()[i]) continue;
    f(static_cast<double>(pred.data()[i]) - gt.data()[i]);
    ++n;
  }
  if (n == 0) throw DataError("evaluation: no valid pixels");
  return n;
}

}  // namespace

double bad_x(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid, double x) {
  check_inputs(pred, gt, valid);
  if (!(x > 0.0)) throw ConfigError(fmt::format("bad-pixel threshold must be positive, got {}", x));
  std::size_t bad = 0;
  const std::size_t n = for_valid(pred, gt, valid, [&](double r) { bad += std::abs(r) > x; });
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

std::pair<double, double> avg_rms(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid) {
  check_inputs(pred, gt, valid);
  double sa = 0.0;
  double s2 = 0.0;
  const std::size_t n = for_valid(pred, gt, valid, [&](double r) {
    sa += std::abs(r);
    s2 += r * r;
  });
  return {sa / static_cast<double>(n), std::sqrt(s2 / static_cast<double>(n))};
}

MetricReport evaluate(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid, MaskKind kind) {
  check_inputs(pred, gt, valid);
  MetricReport r;
  r.mask = kind;
  r.total = pred.size();
  std::array<std::size_t, 5> bad{};
  double sa = 0.0;
  double s2 = 0.0;
  r.pixels = for_valid(pred, gt, valid, [&](double res) {
    const double a = std::abs(res);
    for (std::size_t i = 0; i < kBadThresholds.size(); ++i) bad[i] += a > kBadThresholds[i];
    sa += a;
    s2 += res * res;
  });
  const double n = static_cast<double>(r.pixels);
  for (std::size_t i = 0; i < bad.size(); ++i) r.bad[i] = 100.0 * static_cast<double>(bad[i]) / n;
  r.avg = sa / n;
  r.rms = std::sqrt(s2 / n);
  return r;
}

std::vector<MetricDelta> compare_report(const MetricReport& baseline, const MetricReport& refined,
                                        const std::vector<std::string>& metrics) {
  if (baseline.mask != refined.mask) {
    throw ConfigError(fmt::format("cannot compare a {} report with a {} report", mask_kind_name(baseline.mask),
                                  mask_kind_name(refined.mask)));
  }
  if (baseline.pixels == 0 || refined.pixels == 0) throw DataError("cannot compare an empty report");
  std::vector<MetricDelta> out;
  for (const auto& name : metrics) {
    MetricDelta d{name, baseline.metric(name), refined.metric(name)};
    d.delta = d.refined - d.baseline;
    d.improvement = d.baseline != 0.0 ? -100.0 * d.delta / d.baseline : 0.0;
    out.push_back(d);
  }
  return out;
}

std::string render_report_text(const MetricReport& r, const std::vector<std::string>& metrics) {
  std::string s = fmt::format("mask {} ({} of {} pixels)\n", mask_kind_name(r.mask), r.pixels, r.total);
  for (const auto& m : metrics) {
    const bool pct = m.rfind("bad", 0) == 0;
    s += fmt::format("  {:<8}{:>10.4f}{}\n", m, r.metric(m), pct ? " %" : " px");
  }
  return s;
}

std::string render_report_csv(const MetricReport& r, const std::vector<std::string>& metrics) {
  std::string s = "metric,value,mask,pixels\n";
  for (const auto& m : metrics) s += fmt::format("{},{:.6f},{},{}\n", m, r.metric(m), mask_kind_name(r.mask), r.pixels);
  return s;
}

std::string render_delta_text(const std::vector<MetricDelta>& deltas) {
  std::string s = fmt::format("{:<8}{:>12}{:>12}{:>12}{:>13}\n", "metric", "baseline", "refined", "delta", "improvement");
  for (const auto& d : deltas) {
    s += fmt::format("{:<8}{:>12.4f}{:>12.4f}{:>+12.4f}{:>12.1f}%\n", d.name, d.baseline, d.refined, d.delta,
                     d.improvement);
  }
  return s;
}

std::string render_delta_csv(const std::vector<MetricDelta>& deltas) {
  std::string s = "metric,baseline,refined,delta,improvement_percent\n";
  for (const auto& d : deltas) {
    s += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.3f}\n", d.name, d.baseline, d.refined, d.delta, d.improvement);
  }
  return s;
}

}  // namespace collabvn
