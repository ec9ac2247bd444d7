#include "collabvn/conv.hpp"

#include <fmt/format.h>

namespace collabvn {

std::string shape_string(int height, int width, int channels) {
  return fmt::format("{}x{}x{}", height, width, channels);
}

FilterBank::FilterBank(int filters, int in_channels, int ksize)
    : filters_(filters), in_channels_(in_channels), ksize_(ksize) {
  if (filters < 0 || in_channels < 1 || ksize < 1 || ksize % 2 == 0) {
    throw ConfigError(fmt::format("FilterBank: invalid shape {} filters, {} channels, ksize {}",
                                  filters, in_channels, ksize));
  }
  taps_.assign(static_cast<std::size_t>(filters) * kernel_size(), 0.0);
}

template <typename T>
std::vector<T> pad_symmetric(std::span<const T> plane, int height, int width, int r) {
  const int pw = width + 2 * r;
  const int ph = height + 2 * r;
  std::vector<T> out(static_cast<std::size_t>(pw) * ph);
  std::vector<int> col(pw);
  for (int x = 0; x < pw; ++x) col[x] = mirror_index(x - r, width);
  for (int y = 0; y < ph; ++y) {
    const T* src = plane.data() + static_cast<std::size_t>(mirror_index(y - r, height)) * width;
    T* dst = out.data() + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < pw; ++x) dst[x] = src[col[x]];
  }
  return out;
}

namespace {

void check_bank(int channels, const FilterBank& bank, int expected, const char* what) {
  if (channels != expected) {
    throw ConfigError(fmt::format("{}: input has {} channels, filter bank expects {}", what, channels,
                                  expected));
  }
  if (bank.ksize() % 2 == 0) throw ConfigError(fmt::format("{}: kernel side must be odd", what));
}

// Folds a padded accumulator back onto the image plane (adjoint of pad_symmetric).
template <typename T>
void fold_symmetric(const std::vector<T>& padded, int height, int width, int r, std::span<T> plane) {
  const int pw = width + 2 * r;
  const int ph = height + 2 * r;
  std::vector<int> col(pw);
  for (int x = 0; x < pw; ++x) col[x] = mirror_index(x - r, width);
  for (int y = 0; y < ph; ++y) {
    T* dst = plane.data() + static_cast<std::size_t>(mirror_index(y - r, height)) * width;
    const T* src = padded.data() + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < pw; ++x) dst[col[x]] += src[x];
  }
}

}  // namespace

template <typename T>
Grid<T> conv2d(const Grid<T>& input, const FilterBank& bank) {
  check_bank(input.channels(), bank, bank.in_channels(), "conv2d");
  const int h = input.height();
  const int w = input.width();
  const int r = bank.radius();
  const int ks = bank.ksize();
  const int pw = w + 2 * r;
  Grid<T> out(h, w, bank.filters());
  for (int c = 0; c < input.channels(); ++c) {
    const std::vector<T> padded = pad_symmetric<T>(input.plane(c), h, w, r);
    for (int k = 0; k < bank.filters(); ++k) {
      T* dst_plane = out.plane(k).data();
      for (int i = 0; i < ks; ++i) {
        for (int j = 0; j < ks; ++j) {
          const T t = static_cast<T>(bank.tap(k, c, i, j));
          if (t == T{}) continue;
          for (int y = 0; y < h; ++y) {
            T* dst = dst_plane + static_cast<std::size_t>(y) * w;
            const T* src = padded.data() + static_cast<std::size_t>(y + i) * pw + j;
            for (int x = 0; x < w; ++x) dst[x] += t * src[x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Grid<T> conv2d_adjoint(const Grid<T>& input, const FilterBank& bank) {
  check_bank(input.channels(), bank, bank.filters(), "conv2d_adjoint");
  const int h = input.height();
  const int w = input.width();
  const int r = bank.radius();
  const int ks = bank.ksize();
  const int pw = w + 2 * r;
  const int ph = h + 2 * r;
  Grid<T> out(h, w, bank.in_channels());
  std::vector<T> acc(static_cast<std::size_t>(pw) * ph);
  for (int c = 0; c < bank.in_channels(); ++c) {
    std::fill(acc.begin(), acc.end(), T{});
    for (int k = 0; k < bank.filters(); ++k) {
      const T* src_plane = input.plane(k).data();
      for (int i = 0; i < ks; ++i) {
        for (int j = 0; j < ks; ++j) {
          const T t = static_cast<T>(bank.tap(k, c, i, j));
          if (t == T{}) continue;
          for (int y = 0; y < h; ++y) {
            const T* src = src_plane + static_cast<std::size_t>(y) * w;
            T* dst = acc.data() + static_cast<std::size_t>(y + i) * pw + j;
            for (int x = 0; x < w; ++x) dst[x] += t * src[x];
          }
        }
      }
    }
    fold_symmetric(acc, h, w, r, out.plane(c));
  }
  return out;
}

template <typename T>
void conv2d_filter_grad(const Grid<T>& input, const Grid<T>& out_grad, FilterBank& grad) {
  check_bank(input.channels(), grad, grad.in_channels(), "conv2d_filter_grad");
  if (out_grad.channels() != grad.filters() || !input.same_extent(out_grad)) {
    throw ConfigError("conv2d_filter_grad: output gradient shape mismatch");
  }
  const int h = input.height();
  const int w = input.width();
  const int r = grad.radius();
  const int ks = grad.ksize();
  const int pw = w + 2 * r;
  for (int c = 0; c < input.channels(); ++c) {
    const std::vector<T> padded = pad_symmetric<T>(input.plane(c), h, w, r);
    for (int k = 0; k < grad.filters(); ++k) {
      const T* g_plane = out_grad.plane(k).data();
      for (int i = 0; i < ks; ++i) {
        for (int j = 0; j < ks; ++j) {
          double total = 0.0;
          for (int y = 0; y < h; ++y) {
            const T* g = g_plane + static_cast<std::size_t>(y) * w;
            const T* src = padded.data() + static_cast<std::size_t>(y + i) * pw + j;
            T row = T{};
#pragma omp simd reduction(+ : row)
            for (int x = 0; x < w; ++x) row += g[x] * src[x];
            total += row;
          }
          grad.tap(k, c, i, j) += total;
        }
      }
    }
  }
}

#define COLLABVN_INSTANTIATE(T)                                                          \
  template std::vector<T> pad_symmetric<T>(std::span<const T>, int, int, int);            \
  template Grid<T> conv2d<T>(const Grid<T>&, const FilterBank&);                          \
  template Grid<T> conv2d_adjoint<T>(const Grid<T>&, const FilterBank&);                  \
  template void conv2d_filter_grad<T>(const Grid<T>&, const Grid<T>&, FilterBank&);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
