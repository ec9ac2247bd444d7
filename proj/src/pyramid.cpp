#include "collabvn/pyramid.hpp"

#include <cmath>

#include <fmt/format.h>

#include "collabvn/conv.hpp"

namespace collabvn {

void PyramidConfig::validate() const {
  if (levels < 1) throw ConfigError("PyramidConfig: levels must be >= 1");
  double sum = 0.0;
  for (double t : taps) sum += t;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ConfigError(fmt::format("PyramidConfig: blur taps sum to {}, expected 1", sum));
  }
}

std::vector<std::pair<int, int>> level_shapes(int height, int width, int levels) {
  std::vector<std::pair<int, int>> shapes;
  shapes.reserve(levels);
  for (int l = 0; l < levels; ++l) {
    shapes.emplace_back(height, width);
    height = half_ceil(height);
    width = half_ceil(width);
  }
  return shapes;
}

namespace {

constexpr int kTapRadius = 2;

// out(i) = sum_j taps[j] * in(mirror(2i + j - 2)), strided access on both sides.
template <typename T>
void down_1d(const T* in, std::size_t in_stride, int n, T* out, std::size_t out_stride,
             const std::array<T, 5>& taps) {
  const int m = half_ceil(n);
  for (int i = 0; i < m; ++i) {
    T acc{};
    for (int j = 0; j < 5; ++j) acc += taps[j] * in[mirror_index(2 * i + j - kTapRadius, n) * in_stride];
    out[i * out_stride] = acc;
  }
}

// Transpose of down_1d: scatter every coarse sample onto its footprint.
template <typename T>
void up_1d(const T* in, std::size_t in_stride, int n, T* out, std::size_t out_stride,
           const std::array<T, 5>& taps) {
  const int m = half_ceil(n);
  for (int i = 0; i < m; ++i) {
    const T v = in[i * in_stride];
    for (int j = 0; j < 5; ++j) out[mirror_index(2 * i + j - kTapRadius, n) * out_stride] += taps[j] * v;
  }
}

template <typename T>
std::array<T, 5> cast_taps(const PyramidConfig& cfg) {
  std::array<T, 5> t{};
  for (int i = 0; i < 5; ++i) t[i] = static_cast<T>(cfg.taps[i]);
  return t;
}

}  // namespace

template <typename T>
Grid<T> downsample_blur(const Grid<T>& input, const PyramidConfig& cfg) {
  const int h = input.height();
  const int w = input.width();
  const int hh = half_ceil(h);
  const int hw = half_ceil(w);
  const auto taps = cast_taps<T>(cfg);
  Grid<T> out(hh, hw, input.channels());
  std::vector<T> rows(static_cast<std::size_t>(h) * hw);
  for (int c = 0; c < input.channels(); ++c) {
    const T* src = input.plane(c).data();
    for (int y = 0; y < h; ++y) {
      down_1d(src + static_cast<std::size_t>(y) * w, 1, w, rows.data() + static_cast<std::size_t>(y) * hw, 1,
              taps);
    }
    T* dst = out.plane(c).data();
    for (int x = 0; x < hw; ++x) down_1d(rows.data() + x, hw, h, dst + x, hw, taps);
  }
  return out;
}

template <typename T>
Grid<T> upsample_sharpen(const Grid<T>& input, const PyramidConfig& cfg, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1 || input.height() != half_ceil(target_h) ||
      input.width() != half_ceil(target_w)) {
    throw ConfigError(fmt::format("upsample_sharpen: coarse grid {}x{} is inconsistent with target {}x{}",
                                  input.height(), input.width(), target_h, target_w));
  }
  const int hw = input.width();
  const auto taps = cast_taps<T>(cfg);
  Grid<T> out(target_h, target_w, input.channels());
  std::vector<T> rows(static_cast<std::size_t>(target_h) * hw);
  for (int c = 0; c < input.channels(); ++c) {
    std::fill(rows.begin(), rows.end(), T{});
    const T* src = input.plane(c).data();
    for (int x = 0; x < hw; ++x) up_1d(src + x, hw, target_h, rows.data() + x, hw, taps);
    T* dst = out.plane(c).data();
    for (int y = 0; y < target_h; ++y) {
      up_1d(rows.data() + static_cast<std::size_t>(y) * hw, 1, target_w,
            dst + static_cast<std::size_t>(y) * target_w, 1, taps);
    }
  }
  return out;
}

template <typename T>
Grid<T> pyramid_down(const Grid<T>& input, const PyramidConfig& cfg, int level) {
  Grid<T> g = input;
  for (int l = 0; l < level; ++l) g = downsample_blur(g, cfg);
  return g;
}

template <typename T>
Grid<T> pyramid_up(const Grid<T>& input, const PyramidConfig& cfg, int level, int height, int width) {
  if (level == 0) {
    if (input.height() != height || input.width() != width) {
      throw ConfigError("pyramid_up: level-0 grid must match the target shape");
    }
    return input;
  }
  const auto shapes = level_shapes(height, width, level + 1);
  Grid<T> g = input;
  for (int l = level; l > 0; --l) g = upsample_sharpen(g, cfg, shapes[l - 1].first, shapes[l - 1].second);
  return g;
}

#define COLLABVN_INSTANTIATE(T)                                                              \
  template Grid<T> downsample_blur<T>(const Grid<T>&, const PyramidConfig&);                   \
  template Grid<T> upsample_sharpen<T>(const Grid<T>&, const PyramidConfig&, int, int);        \
  template Grid<T> pyramid_down<T>(const Grid<T>&, const PyramidConfig&, int);                 \
  template Grid<T> pyramid_up<T>(const Grid<T>&, const PyramidConfig&, int, int, int);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
