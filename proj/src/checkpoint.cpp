#include "collabvn/checkpoint.hpp"

#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "binary_io.hpp"

namespace collabvn {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic{"VNCKPT01", 8};
constexpr int kVersion = 1;

const char* weight_mode_name(DisparityWeight m) {
  return m == DisparityWeight::kLaggedIterate ? "lagged_iterate" : "input_confidence";
}

DisparityWeight parse_weight_mode(const std::string& s, std::size_t at) {
  if (s == "lagged_iterate") return DisparityWeight::kLaggedIterate;
  if (s == "input_confidence") return DisparityWeight::kInputConfidence;
  throw FormatError(fmt::format("unknown disparity_weight '{}'", s), at);
}

json manifest_of(const Checkpoint& c, std::size_t tensors) {
  const auto& a = c.params.arch;
  json m;
  m["format"] = "VNCKPT01";
  m["version"] = kVersion;
  m["name"] = a.name();
  m["T"] = a.steps;
  m["L"] = a.levels;
  m["K"] = a.filters;
  m["kernel_size"] = a.ksize;
  m["B"] = a.rbf.count;
  m["sigma"] = a.rbf.bandwidth();
  m["rbf_range"] = a.rbf.range;
  m["blur_taps"] = a.blur;
  m["channels"] = {"r", "g", "b", "disparity", "confidence"};
  m["disparities"] = c.disparities;
  m["disparity_scale"] = c.scale();
  m["disparity_weight"] = weight_mode_name(a.weight_mode);
  m["epoch"] = c.epoch;
  m["has_optimizer"] = c.adam.has_value();
  m["optimizer_step"] = c.adam ? c.adam->step : 0;
  m["tensor_count"] = tensors;
  return m;
}

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
  std::size_t offset = 0;
};

template <typename V>
void put_tensor(detail::ByteWriter& out, const std::string& name, const std::vector<std::uint32_t>& dims,
                std::span<V> values) {
  out.uint(static_cast<std::uint16_t>(name.size()));
  out.raw(name);
  out.uint(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) out.uint(d);
  for (double v : values) out.f32(static_cast<float>(v));
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.params.validate();
  const auto blocks = parameter_blocks(ckpt.params);
  if (ckpt.adam && (ckpt.adam->m.size() != blocks.size() || ckpt.adam->v.size() != blocks.size())) {
    throw ConfigError("write_checkpoint: optimizer state does not match the parameters");
  }
  const std::size_t tensors = blocks.size() * (ckpt.adam ? 3 : 1);
  const std::string manifest = manifest_of(ckpt, tensors).dump();

  detail::ByteWriter out;
  out.raw(kMagic);
  out.uint(static_cast<std::uint32_t>(manifest.size()));
  out.raw(manifest);
  for (const auto& b : blocks) put_tensor(out, b.name, b.dims, b.values);
  if (ckpt.adam) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      put_tensor(out, "adam/m/" + blocks[i].name, blocks[i].dims, std::span<const double>(ckpt.adam->m[i]));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      put_tensor(out, "adam/v/" + blocks[i].name, blocks[i].dims, std::span<const double>(ckpt.adam->v[i]));
    }
  }
  detail::dump(path, out.bytes());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  detail::ByteReader in(bytes);
  in.expect_magic(kMagic);
  const auto mlen = in.uint<std::uint32_t>("manifest length");
  const std::size_t manifest_at = in.position();
  const auto text = in.raw(mlen, "manifest");
  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("manifest is not valid JSON: {}", e.what()), manifest_at);
  }

  Checkpoint c;
  std::size_t tensor_count = 0;
  bool has_opt = false;
  std::int64_t opt_step = 0;
  try {
    if (m.at("format").get<std::string>() != "VNCKPT01") throw FormatError("manifest format tag mismatch", manifest_at);
    const int version = m.at("version").get<int>();
    if (version != kVersion) throw FormatError(fmt::format("unsupported checkpoint version {}", version), manifest_at);
    VnArchitecture a;
    a.steps = m.at("T").get<int>();
    a.levels = m.at("L").get<int>();
    a.filters = m.at("K").get<int>();
    a.ksize = m.at("kernel_size").get<int>();
    a.rbf.count = m.at("B").get<int>();
    a.rbf.range = m.at("rbf_range").get<double>();
    a.rbf.sigma = m.at("sigma").get<double>();
    a.blur = m.at("blur_taps").get<std::array<double, 5>>();
    a.weight_mode = parse_weight_mode(m.at("disparity_weight").get<std::string>(), manifest_at);
    const auto channels = m.at("channels").get<std::vector<std::string>>();
    const std::vector<std::string> expected{"r", "g", "b", "disparity", "confidence"};
    if (channels != expected) {
      throw FormatError(fmt::format("channel layout [{}] is not r,g,b,disparity,confidence", fmt::join(channels, ",")),
                        manifest_at);
    }
    c.disparities = m.at("disparities").get<int>();
    c.epoch = m.at("epoch").get<int>();
    has_opt = m.at("has_optimizer").get<bool>();
    opt_step = m.at("optimizer_step").get<std::int64_t>();
    tensor_count = m.at("tensor_count").get<std::size_t>();
    a.validate();
    c.params = make_zero_params(a);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("incomplete manifest: {}", e.what()), manifest_at);
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("inconsistent manifest: {}", e.what()), manifest_at);
  }

  std::map<std::string, Tensor> tensors;
  for (std::size_t i = 0; i < tensor_count; ++i) {
    const std::size_t at = in.position();
    const auto nlen = in.uint<std::uint16_t>("tensor name length");
    std::string name(in.raw(nlen, "tensor name"));
    Tensor t;
    t.offset = at;
    const auto rank = in.uint<std::uint8_t>("tensor rank");
    std::size_t n = 1;
    for (int r = 0; r < rank; ++r) {
      t.dims.push_back(in.uint<std::uint32_t>("tensor dims"));
      n *= t.dims.back();
    }
    if (n * 4 > in.remaining()) throw FormatError(fmt::format("tensor '{}' is truncated", name), in.position());
    t.data.resize(n);
    for (float& v : t.data) v = in.f32("tensor data");
    if (!tensors.emplace(name, std::move(t)).second) throw FormatError(fmt::format("duplicate tensor '{}'", name), at);
  }
  in.expect_end();

  auto fill = [&](const std::string& name, const std::vector<std::uint32_t>& dims, std::span<double> dst) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(fmt::format("missing tensor '{}'", name), in.position());
    if (it->second.dims != dims) {
      throw FormatError(fmt::format("tensor '{}' has dims [{}], expected [{}]", name, fmt::join(it->second.dims, ","),
                                    fmt::join(dims, ",")),
                        it->second.offset);
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = it->second.data[j];
  };
  auto blocks = parameter_blocks(c.params);
  for (auto& b : blocks) fill(b.name, b.dims, b.values);
  if (has_opt) {
    AdamState s = AdamState::zeros_like(c.params);
    s.step = opt_step;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      fill("adam/m/" + blocks[i].name, blocks[i].dims, s.m[i]);
      fill("adam/v/" + blocks[i].name, blocks[i].dims, s.v[i]);
    }
    c.adam = std::move(s);
  }
  const std::size_t expected = blocks.size() * (has_opt ? 3 : 1);
  if (tensors.size() != expected) {
    throw FormatError(fmt::format("{} tensors present, expected {}", tensors.size(), expected), in.position());
  }
  return c;
}

void round_to_float(Checkpoint& ckpt) {
  auto round = [](std::span<double> s) {
    for (double& v : s) v = static_cast<float>(v);
  };
  for (auto& b : parameter_blocks(ckpt.params)) round(b.values);
  if (ckpt.adam) {
    for (auto& m : ckpt.adam->m) round(m);
    for (auto& v : ckpt.adam->v) round(v);
  }
}

}  // namespace collabvn
