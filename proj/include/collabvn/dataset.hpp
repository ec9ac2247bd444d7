#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "collabvn/train.hpp"

namespace collabvn {

/// One sample directory: NNN/{left.png,right.png,cost.cvol,cost_r.cvol,gt.pfm,noc.png?}.
struct DatasetEntry {
  std::filesystem::path dir;
  std::filesystem::path left;
  std::filesystem::path right;
  std::filesystem::path cost;
  std::filesystem::path cost_right;
  std::filesystem::path ground_truth;
  std::optional<std::filesystem::path> noc;
};

/// Sample directories of `root` in name order. Throws DataError for a missing
/// or empty root, and lists every entry lacking a required file.
std::vector<DatasetEntry> list_dataset(const std::filesystem::path& root);

template <typename T>
struct LoadedSample {
  TrainSample<T> sample;
  std::optional<Mask> noc;
};

/// Reads the volumes, the left image and the ground truth and derives the
/// refinement inputs. Pixels without ground truth are excluded from `valid`.
template <typename T>
LoadedSample<T> load_sample(const DatasetEntry& entry, const InputConfig& cfg = {});

}  // namespace collabvn
