#pragma once

#include <cstdint>
#include <filesystem>

#include "collabvn/cost_volume.hpp"

namespace collabvn {

struct SyntheticConfig {
  int height = 128;
  int width = 128;
  double max_disparity = 32.0;  // ground truth lies in [0, max_disparity]
  int disparities = 48;         // D of the generated cost volumes
  int min_layers = 3;           // foreground planes on top of the background
  int max_layers = 6;
  double noise = 0.01;             // Gaussian image noise (std dev)
  double outlier_fraction = 0.15;  // pixels per view whose cost gets a false minimum
  double outlier_depth = 0.2;      // false minimum = profile minimum - outlier_depth

  void validate() const;
};

/// Rectified pair of a layered piecewise-planar scene.
struct SyntheticPair {
  Grid<float> left;          // RGB in [0, 1]
  Grid<float> right;
  Grid<float> ground_truth;  // left-view disparity, px
  Mask noc;                  // left pixels visible in the right view
  CostVolume<float> cost;        // census, left reference, with injected outliers
  CostVolume<float> cost_right;  // census, right reference, with injected outliers
};

/// Deterministic in (cfg, seed).
SyntheticPair make_synthetic_pair(const SyntheticConfig& cfg, std::uint64_t seed);

/// Writes `count` pairs as dir/NNN/{left.png,right.png,cost.cvol,cost_r.cvol,gt.pfm,noc.png}.
/// Pair i uses seed `seed + i`.
void write_synthetic_dataset(const std::filesystem::path& dir, int count, const SyntheticConfig& cfg,
                             std::uint64_t seed);

}  // namespace collabvn
