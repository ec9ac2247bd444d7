#pragma once

#include <filesystem>
#include <vector>

#include "collabvn/regularizer.hpp"
#include "collabvn/state.hpp"

namespace collabvn {

/// Blue-to-red colormap of disparities in [0, max_disparity]; RGB in [0, 1].
Grid<float> colorize_disparity(const Grid<float>& disparity, double max_disparity);

/// Tiles a filter bank as K rows by C columns of k x k kernels, each tap
/// repeated `zoom` times. Taps map to 0.5 + 0.5 t / max|t| over the bank, so an
/// all-zero bank is flat gray. Tiles are separated by one gray pixel.
Grid<float> filter_mosaic(const FilterBank& bank, int zoom = 4);

struct ActivationSamples {
  std::vector<double> s;
  std::vector<std::vector<double>> rho;  // [k][i]
  std::vector<std::vector<double>> phi;  // [k][i]
};

/// rho_k and phi_k at `count` evenly spaced responses over the basis range.
ActivationSamples sample_activation(const RbfActivation& act, int count = 121);

/// Columns: s, rho_0..rho_{K-1}, phi_0..phi_{K-1}.
void write_activation_csv(const ActivationSamples& samples, const std::filesystem::path& path);

/// Line plot of every curve on white; the y range covers all curves (and is
/// symmetric about 0 with a minimum half-height of 1).
Grid<float> plot_curves(const std::vector<double>& x, const std::vector<std::vector<double>>& curves,
                        int width = 320, int height = 240);

/// Writes step_{t:02}_{rgb,disparity,confidence}.png for t = 0..T, i.e.
/// 3 (T + 1) files. Returns the paths in order.
std::vector<std::filesystem::path> dump_trajectory(const std::vector<CollabState<float>>& trajectory,
                                                   int disparities, const std::filesystem::path& dir);

}  // namespace collabvn
