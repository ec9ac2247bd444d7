#include "collabvn/dataset.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "collabvn/image_io.hpp"

namespace collabvn {

namespace fs = std::filesystem;

std::vector<DatasetEntry> list_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError(fmt::format("dataset directory '{}' does not exist", root.string()));
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError(fmt::format("dataset directory '{}' holds no samples", root.string()));

  std::vector<DatasetEntry> out;
  std::vector<std::string> problems;
  for (const auto& d : dirs) {
    DatasetEntry e{d, d / "left.png", d / "right.png", d / "cost.cvol", d / "cost_r.cvol", d / "gt.pfm", {}};
    std::vector<std::string> missing;
    for (const auto* p : {&e.left, &e.right, &e.cost, &e.cost_right, &e.ground_truth}) {
      if (!fs::is_regular_file(*p)) missing.push_back(p->filename().string());
    }
    if (fs::is_regular_file(d / "noc.png")) e.noc = d / "noc.png";
    if (!missing.empty()) {
      problems.push_back(fmt::format("  {}: missing {}", d.string(), fmt::join(missing, ", ")));
    } else {
      out.push_back(std::move(e));
    }
  }
  if (!problems.empty()) {
    throw DataError(fmt::format("malformed dataset entries:\n{}", fmt::join(problems, "\n")));
  }
  return out;
}

template <typename T>
LoadedSample<T> load_sample(const DatasetEntry& entry, const InputConfig& cfg) {
  const auto left = read_image(entry.left);
  const auto cost = read_cost_volume(entry.cost);
  const auto cost_r = read_cost_volume(entry.cost_right);
  Mask valid;
  const auto gt = read_disparity(entry.ground_truth, &valid);
  if (gt.height() != cost.height() || gt.width() != cost.width()) {
    throw DataError(fmt::format("{}: ground truth {}x{} vs cost volume {}x{}", entry.dir.string(), gt.height(),
                                gt.width(), cost.height(), cost.width()));
  }
  LoadedSample<T> out;
  try {
    out.sample.inputs =
        build_inputs(left.template cast<T>(), volume_cast<float, T>(cost), volume_cast<float, T>(cost_r), cfg);
  } catch (const ConfigError& e) {
    throw DataError(fmt::format("{}: {}", entry.dir.string(), e.what()));
  }
  out.sample.ground_truth = gt.template cast<T>();
  out.sample.valid = std::move(valid);
  if (entry.noc) {
    out.noc = read_mask(*entry.noc);
    if (!out.noc->same_extent(gt)) throw DataError(fmt::format("{}: noc mask size differs", entry.dir.string()));
  }
  return out;
}

template LoadedSample<float> load_sample<float>(const DatasetEntry&, const InputConfig&);
template LoadedSample<double> load_sample<double>(const DatasetEntry&, const InputConfig&);

}  // namespace collabvn
