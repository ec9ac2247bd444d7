#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "collabvn/grid.hpp"

namespace collabvn {

/// H x W x D array stored with the disparity index fastest, i.e. ordered
/// (row, column, disparity) like the CVOL1 container.
template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(int height, int width, int disparities, T fill = T{});

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int disparities() const noexcept { return disparities_; }

  T& at(int y, int x, int d) noexcept { return values_[index(y, x) + d]; }
  T at(int y, int x, int d) const noexcept { return values_[index(y, x) + d]; }

  std::span<T> profile(int y, int x) noexcept {
    return {values_.data() + index(y, x), static_cast<std::size_t>(disparities_)};
  }
  std::span<const T> profile(int y, int x) const noexcept {
    return {values_.data() + index(y, x), static_cast<std::size_t>(disparities_)};
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  bool same_shape(const Volume& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && disparities_ == o.disparities_;
  }

 private:
  std::size_t index(int y, int x) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * disparities_;
  }

  int height_ = 0;
  int width_ = 0;
  int disparities_ = 0;
  std::vector<T> values_;
};

/// Matching costs; smaller is better.
template <typename T>
class CostVolume : public Volume<T> {
 public:
  using Volume<T>::Volume;
};

/// Per-pixel distributions over disparities (each profile sums to one).
template <typename T>
class ProbVolume : public Volume<T> {
 public:
  using Volume<T>::Volume;
};

/// Dense per-pixel descriptors, stored (row, column, feature).
template <typename T>
class FeatureMap : public Volume<T> {
 public:
  using Volume<T>::Volume;
  int features() const noexcept { return this->disparities(); }
};

/// Which image is the reference. For kRight the candidate for pixel x at
/// disparity d is x + d in the left image; for kLeft it is x - d in the right.
enum class View { kLeft, kRight };

/// Hamming distance between 5x5 census signatures of the luma images,
/// normalised by the 24 signature bits so that costs lie in [0, 1]. Shifts that
/// leave the image get cost 1. Inputs may be gray or RGB.
template <typename T>
CostVolume<T> census_cost_volume(const Grid<T>& left, const Grid<T>& right, int disparities,
                                 View view = View::kLeft);

/// cost(x, d) = -<psi_ref(x), psi_other(x -+ d)>. Shifts that leave the image
/// get the largest in-range cost of the volume.
template <typename T>
CostVolume<T> feature_cost_volume(const FeatureMap<T>& psi0, const FeatureMap<T>& psi1, int disparities,
                                  View view = View::kLeft);

template <typename T>
ProbVolume<T> softmax_prob(const CostVolume<T>& volume, double eta);

/// Winner-takes-all over the probability profile; ties go to the smallest disparity.
template <typename T>
Grid<int> wta(const ProbVolume<T>& prob);

enum class SubpixelMode {
  kVertex,        // vertex of the parabola through the three samples around the maximum
  kForwardNewton  // Newton step with the one-sided numerator 2 (b - c) in place of a - c
};

/// Offset of the refined disparity relative to the integer maximum `b`, for the
/// probabilities a = p(d-1), b = p(d), c = p(d+1). Zero when the curvature is
/// not negative; always clamped to [-0.5, 0.5].
double subpixel_offset(double a, double b, double c, SubpixelMode mode = SubpixelMode::kVertex);

/// Partial derivatives of the vertex-form offset w.r.t. (a, b, c). Zero when
/// the offset is degenerate or clamped.
std::array<double, 3> subpixel_offset_grad(double a, double b, double c);

template <typename T>
struct SubpixelResult {
  Grid<T> disparity;    // d-check, sub-pixel
  Grid<T> probability;  // p-check, linear interpolation at d-check
};

template <typename T>
SubpixelResult<T> subpixel_refine(const ProbVolume<T>& prob, const Grid<int>& wta_disparity,
                                  SubpixelMode mode = SubpixelMode::kVertex);

/// Sparse gradient of d-check: only the three supporting samples are non-zero.
template <typename T>
struct SubpixelGrad {
  Grid<T> wrt_prev;    // d/dp(x, dbar - 1)
  Grid<T> wrt_center;  // d/dp(x, dbar)
  Grid<T> wrt_next;    // d/dp(x, dbar + 1)
};

template <typename T>
SubpixelGrad<T> subpixel_grad(const ProbVolume<T>& prob, const Grid<int>& wta_disparity);

enum class LrLookup {
  kMatchedColumn,  // x - d_left(x): the pixel the left disparity points at
  kPrinted         // x + d_left(x), the opposite sign convention
};

/// |d_left(x) + d_right(col(x))| with d_right carrying negated disparities.
/// Lookups outside the image yield +infinity.
template <typename T>
Grid<T> lr_distance(const Grid<T>& d_left, const Grid<T>& d_right, LrLookup lookup = LrLookup::kMatchedColumn);

/// p_o = max(eps - dist, 0) / eps.
template <typename T>
Grid<T> occlusion_prob(const Grid<T>& dist, double eps);

template <typename T>
Grid<T> total_confidence(const Grid<T>& matching, const Grid<T>& not_occluded);

enum PixelStatus : std::uint8_t {
  kInpainted = 0,  // failed the LR check, filled from the same row
  kValid = 1,
  kFallback = 2  // whole row failed; filled with the image-wide median
};

template <typename T>
struct InpaintResult {
  Grid<T> disparity;
  Mask status;
};

/// Pixels with p_o == 0 take the nearest valid disparity to their left; pixels
/// at the left margin take the nearest valid disparity to their right.
template <typename T>
InpaintResult<T> inpaint_occluded(const Grid<T>& disparity, const Grid<T>& not_occluded);

struct InputConfig {
  double eta = 0.075;
  double eps = 3.0;
  SubpixelMode subpixel = SubpixelMode::kVertex;
  LrLookup lookup = LrLookup::kMatchedColumn;
};

/// Everything the refinement network consumes.
template <typename T>
struct RefinementInputs {
  Grid<T> disparity;      // inpainted sub-pixel disparity in pixels
  Grid<T> raw_disparity;  // sub-pixel WTA before inpainting
  Grid<T> confidence;     // c = p-check * p_o
  Grid<T> image;          // reference image, 3 channels in [0, 1]
  Mask status;            // PixelStatus per pixel
  int disparities = 0;

  /// Divisor that maps disparities to the unit interval.
  double scale() const noexcept { return disparities > 1 ? disparities - 1 : 1; }
  void validate() const;

  template <typename U>
  RefinementInputs<U> cast() const {
    return {disparity.template cast<U>(), raw_disparity.template cast<U>(), confidence.template cast<U>(),
            image.template cast<U>(), status, disparities};
  }
  /// Sub-window [y0, y0+h) x [x0, x0+w).
  RefinementInputs crop(int y0, int x0, int h, int w) const;
};

template <typename T>
RefinementInputs<T> build_inputs(const Grid<T>& left_image, const CostVolume<T>& left_volume,
                                 const CostVolume<T>& right_volume, const InputConfig& cfg = {});

/// CVOL1 container: 8-byte magic, u32 H, W, D, then float32 values, all little-endian.
void write_cost_volume(const CostVolume<float>& volume, const std::filesystem::path& path);
CostVolume<float> read_cost_volume(const std::filesystem::path& path);

/// Same container layout with magic "FMAP1" and the feature dimension in place of D.
void write_feature_map(const FeatureMap<float>& features, const std::filesystem::path& path);
FeatureMap<float> read_feature_map(const std::filesystem::path& path);

template <typename T, typename U>
CostVolume<U> volume_cast(const CostVolume<T>& v) {
  CostVolume<U> out(v.height(), v.width(), v.disparities());
  std::transform(v.values().begin(), v.values().end(), out.values().begin(),
                 [](T x) { return static_cast<U>(x); });
  return out;
}

}  // namespace collabvn
