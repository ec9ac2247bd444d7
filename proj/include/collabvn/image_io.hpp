#pragma once

#include <filesystem>

#include "collabvn/grid.hpp"

namespace collabvn {

/// Middlebury PFM. "Pf" holds one channel, "PF" three; a negative scale marks
/// little-endian payload. Rows are stored bottom-up and flipped on read.
/// Non-finite samples (Middlebury marks holes with +inf) are replaced by 0 and
/// reported through `invalid` when given.
Grid<float> read_pfm(const std::filesystem::path& path, Mask* invalid = nullptr);

/// Writes little-endian PFM (scale -1). Grid must have 1 or 3 channels.
void write_pfm(const Grid<float>& grid, const std::filesystem::path& path);

/// Kitti 2015 disparity PNG: 16-bit gray, disparity = stored / 256, stored 0 = invalid.
struct KittiDisparity {
  Grid<float> disparity;
  Mask valid;
};

KittiDisparity read_kitti_disp(const std::filesystem::path& path);

/// Stores round(d * 256) clamped to [1, 65535] where valid, 0 elsewhere.
/// Pass an empty mask to treat every pixel as valid.
void write_kitti_disp(const Grid<float>& disparity, const Mask& valid, const std::filesystem::path& path);

/// Reads an 8/16-bit PNG, a binary PPM/PGM or a PFM. PNG and PNM values are
/// scaled to [0,1]; 1 channel for gray, 3 for color, alpha is dropped.
Grid<float> read_image(const std::filesystem::path& path);

/// Raw 16-bit gray PNG samples (no scaling). Throws FormatError on other depths.
Grid<std::uint16_t> read_png16(const std::filesystem::path& path);

/// Writes an 8-bit PNG from [0,1]-scaled 1- or 3-channel data (values clamped).
void write_png(const Grid<float>& image, const std::filesystem::path& path);

/// Binary PPM (3 channels) or PGM (1 channel), 8-bit.
void write_pnm(const Grid<float>& image, const std::filesystem::path& path);

/// Any disparity file by extension: .pfm or Kitti .png. `valid`, if given,
/// receives the mask of usable pixels.
Grid<float> read_disparity(const std::filesystem::path& path, Mask* valid = nullptr);
void write_disparity(const Grid<float>& disparity, const std::filesystem::path& path);

/// Mask PNG/PNM: any nonzero sample counts as set.
Mask read_mask(const std::filesystem::path& path);

/// ITU-R BT.601 luma of a 3-channel grid; 1-channel grids are returned as is.
template <typename T>
Grid<T> to_luma(const Grid<T>& image);

/// Replicates a gray grid to three channels; 3-channel grids are returned as is.
template <typename T>
Grid<T> to_rgb(const Grid<T>& image);

}  // namespace collabvn
