#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "collabvn/errors.hpp"

namespace collabvn {

/// Dense multi-channel 2D raster in planar layout: all pixels of channel 0,
/// then channel 1, and so on. Within a plane the storage is row-major.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0) {
      throw ConfigError("Grid dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& at(int y, int x, int c = 0) noexcept {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }
  const T& at(int y, int x, int c = 0) const noexcept {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }

  std::span<T> plane(int c) noexcept { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const noexcept {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  template <typename U>
  bool same_extent(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Single-channel copy of channel `c`.
  Grid channel(int c) const {
    Grid out(height_, width_, 1);
    std::copy_n(plane(c).begin(), plane_size(), out.data().begin());
    return out;
  }

  void set_channel(int c, const Grid& src) {
    if (!same_extent(src) || src.channels() != 1) {
      throw ConfigError("set_channel: source must be a single-channel grid of equal extent");
    }
    std::copy_n(src.data().begin(), plane_size(), plane(c).begin());
  }

  template <typename U>
  Grid<U> cast() const {
    Grid<U> out(height_, width_, channels_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Per-pixel boolean (0/1) or small enum raster.
using Mask = Grid<std::uint8_t>;

std::string shape_string(int height, int width, int channels);

template <typename T>
std::string shape_string(const Grid<T>& g) {
  return shape_string(g.height(), g.width(), g.channels());
}

/// Euclidean inner product over all entries, accumulated in double.
template <typename T>
double dot(const Grid<T>& a, const Grid<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("dot: shape mismatch");
  double acc = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) acc += static_cast<double>(da[i]) * db[i];
  return acc;
}

template <typename T>
double norm2(const Grid<T>& a) {
  return std::sqrt(dot(a, a));
}

/// a += s * b
template <typename T>
void axpy(Grid<T>& a, double s, const Grid<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("axpy: shape mismatch");
  auto da = a.data();
  auto db = b.data();
  const T st = static_cast<T>(s);
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += st * db[i];
}

/// Sub-window [y0, y0+h) x [x0, x0+w) of every channel.
template <typename T>
Grid<T> crop_grid(const Grid<T>& g, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 0 || w < 0 || y0 + h > g.height() || x0 + w > g.width()) {
    throw ConfigError("crop_grid: window outside the grid");
  }
  Grid<T> out(h, w, g.channels());
  for (int c = 0; c < g.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.at(y, x, c) = g.at(y0 + y, x0 + x, c);
    }
  }
  return out;
}

}  // namespace collabvn
