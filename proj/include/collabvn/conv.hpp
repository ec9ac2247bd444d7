#pragma once

#include <span>
#include <vector>

#include "collabvn/grid.hpp"

namespace collabvn {

/// Half-sample symmetric index folding: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
/// Valid for any integer `i` and any `n >= 1`.
inline int mirror_index(int i, int n) noexcept {
  const int period = 2 * n;
  int r = i % period;
  if (r < 0) r += period;
  return r < n ? r : period - 1 - r;
}

/// K multi-channel kernels of shape (in_channels x ksize x ksize).
/// Taps are stored as [filter][channel][row][col].
class FilterBank {
 public:
  FilterBank() = default;
  FilterBank(int filters, int in_channels, int ksize);

  int filters() const noexcept { return filters_; }
  int in_channels() const noexcept { return in_channels_; }
  int ksize() const noexcept { return ksize_; }
  int radius() const noexcept { return ksize_ / 2; }
  std::size_t kernel_size() const noexcept {
    return static_cast<std::size_t>(in_channels_) * ksize_ * ksize_;
  }

  double& tap(int k, int c, int i, int j) noexcept {
    return taps_[((static_cast<std::size_t>(k) * in_channels_ + c) * ksize_ + i) * ksize_ + j];
  }
  double tap(int k, int c, int i, int j) const noexcept {
    return taps_[((static_cast<std::size_t>(k) * in_channels_ + c) * ksize_ + i) * ksize_ + j];
  }

  std::span<double> kernel(int k) noexcept { return {taps_.data() + k * kernel_size(), kernel_size()}; }
  std::span<const double> kernel(int k) const noexcept {
    return {taps_.data() + k * kernel_size(), kernel_size()};
  }

  std::span<double> taps() noexcept { return taps_; }
  std::span<const double> taps() const noexcept { return taps_; }

  bool same_shape(const FilterBank& o) const noexcept {
    return filters_ == o.filters_ && in_channels_ == o.in_channels_ && ksize_ == o.ksize_;
  }

 private:
  int filters_ = 0;
  int in_channels_ = 0;
  int ksize_ = 1;
  std::vector<double> taps_;
};

/// Multi-channel 2D cross-correlation with symmetric padding:
/// out_k(y,x) = sum_{c,i,j} kappa_k(c,i,j) * in_c(y+i-r, x+j-r).
template <typename T>
Grid<T> conv2d(const Grid<T>& input, const FilterBank& bank);

/// Exact adjoint of conv2d (same padding rule); maps K channels back to in_channels.
template <typename T>
Grid<T> conv2d_adjoint(const Grid<T>& input, const FilterBank& bank);

/// Accumulates d<out_grad, conv2d(input)>/d(taps) into `grad` (same shape as the bank).
template <typename T>
void conv2d_filter_grad(const Grid<T>& input, const Grid<T>& out_grad, FilterBank& grad);

/// Symmetric-padded copy of one plane with `r` extra pixels on every side.
template <typename T>
std::vector<T> pad_symmetric(std::span<const T> plane, int height, int width, int r);

}  // namespace collabvn
