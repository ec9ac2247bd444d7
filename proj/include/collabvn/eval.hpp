#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "collabvn/grid.hpp"

namespace collabvn {

enum class MaskKind {
  kOcc,  // every pixel with ground truth
  kNoc   // non-occluded pixels only
};

const char* mask_kind_name(MaskKind kind);

inline constexpr std::array<double, 5> kBadThresholds = {0.5, 1.0, 2.0, 3.0, 4.0};

struct MetricReport {
  std::array<double, 5> bad{};  // percentages for kBadThresholds
  double avg = 0.0;             // mean absolute error, px
  double rms = 0.0;             // root mean squared error, px
  std::size_t pixels = 0;       // evaluated pixels
  std::size_t total = 0;        // pixels in the image
  MaskKind mask = MaskKind::kOcc;

  /// Value of a metric by name: bad0.5, bad1, bad2, bad3, bad4, avg, rms.
  double metric(const std::string& name) const;
};

/// Metric names in report order.
const std::vector<std::string>& metric_names();
bool is_metric_name(const std::string& name);

/// 100 * |{valid : |pred - gt| > x}| / |valid|. Throws DataError without valid pixels.
double bad_x(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid, double x);

/// (mean |r|, sqrt(mean r^2)) over valid pixels.
std::pair<double, double> avg_rms(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid);

MetricReport evaluate(const Grid<float>& pred, const Grid<float>& gt, const Mask& valid,
                      MaskKind kind = MaskKind::kOcc);

struct MetricDelta {
  std::string name;
  double baseline = 0.0;
  double refined = 0.0;
  double delta = 0.0;        // refined - baseline
  double improvement = 0.0;  // percent reduction relative to the baseline (0 when baseline is 0)
};

/// Per-metric differences. Both reports must use the same mask kind and hold pixels.
std::vector<MetricDelta> compare_report(const MetricReport& baseline, const MetricReport& refined,
                                        const std::vector<std::string>& metrics = metric_names());

std::string render_report_text(const MetricReport& r, const std::vector<std::string>& metrics = metric_names());
std::string render_report_csv(const MetricReport& r, const std::vector<std::string>& metrics = metric_names());
std::string render_delta_text(const std::vector<MetricDelta>& deltas);
std::string render_delta_csv(const std::vector<MetricDelta>& deltas);

}  // namespace collabvn
