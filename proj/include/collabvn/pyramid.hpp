#pragma once

#include <array>
#include <utility>
#include <vector>

#include "collabvn/grid.hpp"

namespace collabvn {

/// Blur-and-subsample pyramid. Level 0 is the input resolution; level l is
/// reached by l applications of downsample_blur. The blur taps are applied
/// separably with symmetric padding and must sum to one.
struct PyramidConfig {
  int levels = 1;
  std::array<double, 5> taps = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

  void validate() const;
};

constexpr int half_ceil(int n) noexcept { return (n + 1) / 2; }

/// Spatial extents (height, width) of levels 0..levels-1 for a full-size input.
std::vector<std::pair<int, int>> level_shapes(int height, int width, int levels);

template <typename T>
Grid<T> downsample_blur(const Grid<T>& input, const PyramidConfig& cfg);

/// Exact adjoint of downsample_blur for an input of shape target_h x target_w.
template <typename T>
Grid<T> upsample_sharpen(const Grid<T>& input, const PyramidConfig& cfg, int target_h, int target_w);

/// A^l u: `level` successive downsamplings (identity for level 0).
template <typename T>
Grid<T> pyramid_down(const Grid<T>& input, const PyramidConfig& cfg, int level);

/// (A^l)^T v back to a height x width grid.
template <typename T>
Grid<T> pyramid_up(const Grid<T>& input, const PyramidConfig& cfg, int level, int height, int width);

}  // namespace collabvn
