#pragma once

#include "collabvn/grid.hpp"

namespace collabvn {

/// Channel layout of the joint state u = (rgb, disparity, confidence). The
/// disparity channel is normalised to [0, 1] by the cost volume's D - 1.
namespace channel {
constexpr int kRed = 0;
constexpr int kGreen = 1;
constexpr int kBlue = 2;
constexpr int kDisparity = 3;
constexpr int kConfidence = 4;
constexpr int kColorCount = 3;
constexpr int kCount = 5;
}  // namespace channel

template <typename T>
using CollabState = Grid<T>;

inline void check_state(int channels, const char* what) {
  if (channels != channel::kCount) {
    throw ConfigError(std::string(what) + ": state must have 5 channels, got " + std::to_string(channels));
  }
}

}  // namespace collabvn
