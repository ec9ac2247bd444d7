#include "collabvn/cost_volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "collabvn/conv.hpp"
#include "collabvn/image_io.hpp"

namespace collabvn {

template <typename T>
Volume<T>::Volume(int height, int width, int disparities, T fill)
    : height_(height), width_(width), disparities_(disparities) {
  if (height < 0 || width < 0 || disparities < 0) throw ConfigError("Volume dimensions must be non-negative");
  values_.assign(static_cast<std::size_t>(height) * width * disparities, fill);
}

namespace {

constexpr int kCensusRadius = 2;
constexpr int kCensusBits = 24;

template <typename T>
std::vector<std::uint32_t> census_signatures(const Grid<T>& luma) {
  const int h = luma.height();
  const int w = luma.width();
  std::vector<std::uint32_t> sig(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T center = luma.at(y, x);
      std::uint32_t bits = 0;
      for (int i = -kCensusRadius; i <= kCensusRadius; ++i) {
        for (int j = -kCensusRadius; j <= kCensusRadius; ++j) {
          if (i == 0 && j == 0) continue;
          const T v = luma.at(mirror_index(y + i, h), mirror_index(x + j, w));
          bits = (bits << 1) | (v < center ? 1u : 0u);
        }
      }
      sig[static_cast<std::size_t>(y) * w + x] = bits;
    }
  }
  return sig;
}

// Column of the candidate pixel in the other view, or -1 when outside.
inline int candidate_column(int x, int d, int width, View view) {
  const int c = view == View::kLeft ? x - d : x + d;
  return c >= 0 && c < width ? c : -1;
}

void check_disparities(int d) {
  if (d < 2) throw ConfigError(fmt::format("need at least 2 disparities, got {}", d));
}

}  // namespace

template <typename T>
CostVolume<T> census_cost_volume(const Grid<T>& left, const Grid<T>& right, int disparities, View view) {
  check_disparities(disparities);
  if (!left.same_extent(right)) {
    throw ConfigError(fmt::format("census_cost_volume: left {} vs right {}", shape_string(left),
                                  shape_string(right)));
  }
  const auto sl = census_signatures(to_luma(left));
  const auto sr = census_signatures(to_luma(right));
  const auto& ref = view == View::kLeft ? sl : sr;
  const auto& other = view == View::kLeft ? sr : sl;
  const int h = left.height();
  const int w = left.width();
  CostVolume<T> vol(h, w, disparities);
  const T inv_bits = T(1) / T(kCensusBits);
  for (int y = 0; y < h; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      auto prof = vol.profile(y, x);
      for (int d = 0; d < disparities; ++d) {
        const int c = candidate_column(x, d, w, view);
        prof[d] = c < 0 ? T(1) : static_cast<T>(std::popcount(ref[row + x] ^ other[row + c])) * inv_bits;
      }
    }
  }
  return vol;
}

template <typename T>
CostVolume<T> feature_cost_volume(const FeatureMap<T>& psi0, const FeatureMap<T>& psi1, int disparities,
                                  View view) {
  check_disparities(disparities);
  if (!psi0.same_shape(psi1)) {
    throw ConfigError(fmt::format("feature_cost_volume: feature maps {}x{}x{} vs {}x{}x{}", psi0.height(),
                                  psi0.width(), psi0.features(), psi1.height(), psi1.width(),
                                  psi1.features()));
  }
  const int h = psi0.height();
  const int w = psi0.width();
  const auto& ref = view == View::kLeft ? psi0 : psi1;
  const auto& other = view == View::kLeft ? psi1 : psi0;
  CostVolume<T> vol(h, w, disparities);
  T worst = -std::numeric_limits<T>::infinity();
  std::vector<std::uint8_t> out_of_range(vol.values().size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto a = ref.profile(y, x);
      for (int d = 0; d < disparities; ++d) {
        const int c = candidate_column(x, d, w, view);
        const std::size_t idx = (static_cast<std::size_t>(y) * w + x) * disparities + d;
        if (c < 0) {
          out_of_range[idx] = 1;
          continue;
        }
        const auto b = other.profile(y, c);
        double s = 0.0;
        for (std::size_t f = 0; f < a.size(); ++f) s += static_cast<double>(a[f]) * b[f];
        vol.values()[idx] = static_cast<T>(-s);
        worst = std::max(worst, vol.values()[idx]);
      }
    }
  }
  if (!std::isfinite(static_cast<double>(worst))) worst = T(0);
  for (std::size_t i = 0; i < out_of_range.size(); ++i) {
    if (out_of_range[i]) vol.values()[i] = worst;
  }
  return vol;
}

template <typename T>
ProbVolume<T> softmax_prob(const CostVolume<T>& volume, double eta) {
  if (!(eta > 0.0)) throw ConfigError(fmt::format("softmax temperature must be positive, got {}", eta));
  const int dn = volume.disparities();
  ProbVolume<T> prob(volume.height(), volume.width(), dn);
  std::vector<double> e(dn);
  for (int y = 0; y < volume.height(); ++y) {
    for (int x = 0; x < volume.width(); ++x) {
      const auto v = volume.profile(y, x);
      const double vmin = static_cast<double>(*std::min_element(v.begin(), v.end()));
      double sum = 0.0;
      for (int d = 0; d < dn; ++d) {
        e[d] = std::exp(-(static_cast<double>(v[d]) - vmin) / eta);
        sum += e[d];
      }
      auto p = prob.profile(y, x);
      for (int d = 0; d < dn; ++d) p[d] = static_cast<T>(e[d] / sum);
    }
  }
  return prob;
}

template <typename T>
Grid<int> wta(const ProbVolume<T>& prob) {
  Grid<int> out(prob.height(), prob.width());
  for (int y = 0; y < prob.height(); ++y) {
    for (int x = 0; x < prob.width(); ++x) {
      const auto p = prob.profile(y, x);
      out.at(y, x) = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }
  }
  return out;
}

double subpixel_offset(double a, double b, double c, SubpixelMode mode) {
  const double curv = a - 2.0 * b + c;
  if (!(curv < 0.0)) return 0.0;
  const double num = mode == SubpixelMode::kVertex ? a - c : 2.0 * (b - c);
  return std::clamp(num / (2.0 * curv), -0.5, 0.5);
}

std::array<double, 3> subpixel_offset_grad(double a, double b, double c) {
  const double s = a - 2.0 * b + c;
  if (!(s < 0.0)) return {0.0, 0.0, 0.0};
  const double o = (a - c) / (2.0 * s);
  if (o <= -0.5 || o >= 0.5) return {0.0, 0.0, 0.0};
  const double s2 = s * s;
  return {(c - b) / s2, (a - c) / s2, (b - a) / s2};
}

namespace {

template <typename T>
void check_wta(const ProbVolume<T>& prob, const Grid<int>& d) {
  if (d.height() != prob.height() || d.width() != prob.width() || d.channels() != 1) {
    throw ConfigError(fmt::format("WTA map {} does not match volume {}x{}", shape_string(d), prob.height(),
                                  prob.width()));
  }
}

}  // namespace

template <typename T>
SubpixelResult<T> subpixel_refine(const ProbVolume<T>& prob, const Grid<int>& wta_disparity, SubpixelMode mode) {
  check_wta(prob, wta_disparity);
  const int dn = prob.disparities();
  SubpixelResult<T> r{Grid<T>(prob.height(), prob.width()), Grid<T>(prob.height(), prob.width())};
  for (int y = 0; y < prob.height(); ++y) {
    for (int x = 0; x < prob.width(); ++x) {
      const int db = wta_disparity.at(y, x);
      const auto p = prob.profile(y, x);
      const double b = p[db];
      double off = 0.0;
      if (db > 0 && db < dn - 1) off = subpixel_offset(p[db - 1], b, p[db + 1], mode);
      double pc = b;
      if (off > 0.0) pc = (1.0 - off) * b + off * p[db + 1];
      if (off < 0.0) pc = (1.0 + off) * b - off * p[db - 1];
      r.disparity.at(y, x) = static_cast<T>(db + off);
      r.probability.at(y, x) = static_cast<T>(pc);
    }
  }
  return r;
}

template <typename T>
SubpixelGrad<T> subpixel_grad(const ProbVolume<T>& prob, const Grid<int>& wta_disparity) {
  check_wta(prob, wta_disparity);
  const int h = prob.height();
  const int w = prob.width();
  SubpixelGrad<T> g{Grid<T>(h, w), Grid<T>(h, w), Grid<T>(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int db = wta_disparity.at(y, x);
      if (db <= 0 || db >= prob.disparities() - 1) continue;
      const auto p = prob.profile(y, x);
      const auto d = subpixel_offset_grad(p[db - 1], p[db], p[db + 1]);
      g.wrt_prev.at(y, x) = static_cast<T>(d[0]);
      g.wrt_center.at(y, x) = static_cast<T>(d[1]);
      g.wrt_next.at(y, x) = static_cast<T>(d[2]);
    }
  }
  return g;
}

template <typename T>
Grid<T> lr_distance(const Grid<T>& d_left, const Grid<T>& d_right, LrLookup lookup) {
  if (!d_left.same_shape(d_right) || d_left.channels() != 1) {
    throw ConfigError(fmt::format("lr_distance: left {} vs right {}", shape_string(d_left), shape_string(d_right)));
  }
  const int w = d_left.width();
  Grid<T> dist(d_left.height(), w);
  for (int y = 0; y < d_left.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      const double dl = d_left.at(y, x);
      const double target = lookup == LrLookup::kMatchedColumn ? x - dl : x + dl;
      const long col = std::lround(target);
      if (col < 0 || col >= w) {
        dist.at(y, x) = std::numeric_limits<T>::infinity();
      } else {
        dist.at(y, x) = static_cast<T>(std::abs(dl + static_cast<double>(d_right.at(y, static_cast<int>(col)))));
      }
    }
  }
  return dist;
}

template <typename T>
Grid<T> occlusion_prob(const Grid<T>& dist, double eps) {
  if (!(eps > 0.0)) throw ConfigError(fmt::format("occlusion threshold must be positive, got {}", eps));
  Grid<T> p(dist.height(), dist.width(), dist.channels());
  std::transform(dist.data().begin(), dist.data().end(), p.data().begin(), [eps](T d) {
    return static_cast<T>(std::max(eps - static_cast<double>(d), 0.0) / eps);
  });
  return p;
}

template <typename T>
Grid<T> total_confidence(const Grid<T>& matching, const Grid<T>& not_occluded) {
  if (!matching.same_shape(not_occluded)) throw ConfigError("total_confidence: shape mismatch");
  Grid<T> c(matching.height(), matching.width(), matching.channels());
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = matching.data()[i] * not_occluded.data()[i];
  return c;
}

template <typename T>
InpaintResult<T> inpaint_occluded(const Grid<T>& disparity, const Grid<T>& not_occluded) {
  if (!disparity.same_shape(not_occluded) || disparity.channels() != 1) {
    throw ConfigError("inpaint_occluded: disparity and p_o must be single-channel grids of equal shape");
  }
  const int h = disparity.height();
  const int w = disparity.width();
  InpaintResult<T> r{disparity, Mask(h, w)};
  std::vector<T> valid_values;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool ok = not_occluded.at(y, x) > T(0);
      r.status.at(y, x) = ok ? kValid : kInpainted;
      if (ok) valid_values.push_back(disparity.at(y, x));
    }
  }
  T fallback = T(0);
  if (!valid_values.empty()) {
    auto mid = valid_values.begin() + valid_values.size() / 2;
    std::nth_element(valid_values.begin(), mid, valid_values.end());
    fallback = *mid;
  }
  for (int y = 0; y < h; ++y) {
    int first = -1;
    for (int x = 0; x < w; ++x) {
      if (r.status.at(y, x) == kValid) {
        first = x;
        break;
      }
    }
    if (first < 0) {
      for (int x = 0; x < w; ++x) {
        r.disparity.at(y, x) = fallback;
        r.status.at(y, x) = kFallback;
      }
      continue;
    }
    for (int x = 0; x < first; ++x) r.disparity.at(y, x) = disparity.at(y, first);
    T last = disparity.at(y, first);
    for (int x = first; x < w; ++x) {
      if (r.status.at(y, x) == kValid) {
        last = disparity.at(y, x);
      } else {
        r.disparity.at(y, x) = last;
      }
    }
  }
  return r;
}

template <typename T>
void RefinementInputs<T>::validate() const {
  if (disparities < 2) throw ConfigError("RefinementInputs: need at least 2 disparities");
  const int h = disparity.height();
  const int w = disparity.width();
  auto check = [&](auto const& g, int ch, const char* name) {
    if (g.height() != h || g.width() != w || g.channels() != ch) {
      throw ConfigError(fmt::format("RefinementInputs: {} is {}, expected {}", name, shape_string(g),
                                    shape_string(h, w, ch)));
    }
  };
  check(disparity, 1, "disparity");
  check(raw_disparity, 1, "raw disparity");
  check(confidence, 1, "confidence");
  check(image, 3, "image");
  check(status, 1, "status");
  const double dmax = disparities - 1;
  for (T d : disparity.data()) {
    if (!(d >= T(0) && d <= dmax)) throw ConfigError(fmt::format("RefinementInputs: disparity {} outside [0, {}]", d, dmax));
  }
  for (T c : confidence.data()) {
    if (!(c >= T(0) && c <= T(1))) throw ConfigError(fmt::format("RefinementInputs: confidence {} outside [0, 1]", c));
  }
  if (!image.all_finite()) throw ConfigError("RefinementInputs: image contains non-finite values");
}

template <typename T>
RefinementInputs<T> RefinementInputs<T>::crop(int y0, int x0, int h, int w) const {
  return {crop_grid(disparity, y0, x0, h, w), crop_grid(raw_disparity, y0, x0, h, w),
          crop_grid(confidence, y0, x0, h, w), crop_grid(image, y0, x0, h, w),
          crop_grid(status, y0, x0, h, w), disparities};
}

template <typename T>
RefinementInputs<T> build_inputs(const Grid<T>& left_image, const CostVolume<T>& left_volume,
                                 const CostVolume<T>& right_volume, const InputConfig& cfg) {
  if (!left_volume.same_shape(right_volume)) {
    throw ConfigError(fmt::format("left volume {}x{}x{} vs right volume {}x{}x{}", left_volume.height(),
                                  left_volume.width(), left_volume.disparities(), right_volume.height(),
                                  right_volume.width(), right_volume.disparities()));
  }
  if (left_image.height() != left_volume.height() || left_image.width() != left_volume.width()) {
    throw ConfigError(fmt::format("image {} does not match volume {}x{}", shape_string(left_image),
                                  left_volume.height(), left_volume.width()));
  }
  if (left_image.channels() != 1 && left_image.channels() != 3) {
    throw ConfigError(fmt::format("image must have 1 or 3 channels, got {}", left_image.channels()));
  }
  check_disparities(left_volume.disparities());

  const auto pl = softmax_prob(left_volume, cfg.eta);
  const auto pr = softmax_prob(right_volume, cfg.eta);
  const auto sl = subpixel_refine(pl, wta(pl), cfg.subpixel);
  auto sr = subpixel_refine(pr, wta(pr), cfg.subpixel);
  for (T& d : sr.disparity.data()) d = -d;

  const auto p_o = occlusion_prob(lr_distance(sl.disparity, sr.disparity, cfg.lookup), cfg.eps);
  auto inpainted = inpaint_occluded(sl.disparity, p_o);

  RefinementInputs<T> in;
  in.disparity = std::move(inpainted.disparity);
  in.raw_disparity = sl.disparity;
  in.confidence = total_confidence(sl.probability, p_o);
  in.image = to_rgb(left_image);
  for (T& v : in.image.data()) v = std::clamp(v, T(0), T(1));
  in.status = std::move(inpainted.status);
  in.disparities = left_volume.disparities();
  return in;
}

// ---- containers -------------------------------------------------------------

namespace {

constexpr std::string_view kCvolMagic{"CVOL1\0\0\0", 8};
constexpr std::string_view kFmapMagic{"FMAP1\0\0\0", 8};

void write_container(const Volume<float>& v, std::string_view magic, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.raw(magic);
  out.uint(static_cast<std::uint32_t>(v.height()));
  out.uint(static_cast<std::uint32_t>(v.width()));
  out.uint(static_cast<std::uint32_t>(v.disparities()));
  for (float x : v.values()) out.f32(x);
  detail::dump(path, out.bytes());
}

template <typename V>
V read_container(std::string_view magic, const std::filesystem::path& path, const char* third) {
  const auto bytes = detail::slurp(path);
  detail::ByteReader in(bytes);
  in.expect_magic(magic);
  const auto h = in.uint<std::uint32_t>("height");
  const auto w = in.uint<std::uint32_t>("width");
  const std::size_t dims_at = in.position();
  const auto d = in.uint<std::uint32_t>(third);
  constexpr std::uint32_t kLimit = 1u << 16;
  if (h == 0 || w == 0 || d == 0 || h > kLimit || w > kLimit || d > kLimit) {
    throw FormatError(fmt::format("implausible dimensions {}x{}x{}", h, w, d), dims_at);
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * d;
  if (in.remaining() != n * 4) {
    throw FormatError(fmt::format("payload holds {} bytes, expected {}", in.remaining(), n * 4), in.position());
  }
  V v(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  for (float& x : v.values()) {
    const std::size_t at = in.position();
    x = in.f32("payload");
    if (!std::isfinite(x)) throw FormatError("non-finite value", at);
  }
  return v;
}

}  // namespace

void write_cost_volume(const CostVolume<float>& volume, const std::filesystem::path& path) {
  write_container(volume, kCvolMagic, path);
}

CostVolume<float> read_cost_volume(const std::filesystem::path& path) {
  auto v = read_container<CostVolume<float>>(kCvolMagic, path, "disparity count");
  if (v.disparities() < 2) throw FormatError("cost volume needs at least 2 disparities", 16);
  return v;
}

void write_feature_map(const FeatureMap<float>& features, const std::filesystem::path& path) {
  write_container(features, kFmapMagic, path);
}

FeatureMap<float> read_feature_map(const std::filesystem::path& path) {
  return read_container<FeatureMap<float>>(kFmapMagic, path, "feature count");
}

#define COLLABVN_INSTANTIATE(T)                                                                                \
  template class Volume<T>;                                                                                    \
  template struct RefinementInputs<T>;                                                                         \
  template CostVolume<T> census_cost_volume<T>(const Grid<T>&, const Grid<T>&, int, View);                     \
  template CostVolume<T> feature_cost_volume<T>(const FeatureMap<T>&, const FeatureMap<T>&, int, View);        \
  template ProbVolume<T> softmax_prob<T>(const CostVolume<T>&, double);                                        \
  template Grid<int> wta<T>(const ProbVolume<T>&);                                                             \
  template SubpixelResult<T> subpixel_refine<T>(const ProbVolume<T>&, const Grid<int>&, SubpixelMode);         \
  template SubpixelGrad<T> subpixel_grad<T>(const ProbVolume<T>&, const Grid<int>&);                           \
  template Grid<T> lr_distance<T>(const Grid<T>&, const Grid<T>&, LrLookup);                                   \
  template Grid<T> occlusion_prob<T>(const Grid<T>&, double);                                                  \
  template Grid<T> total_confidence<T>(const Grid<T>&, const Grid<T>&);                                        \
  template InpaintResult<T> inpaint_occluded<T>(const Grid<T>&, const Grid<T>&);                               \
  template RefinementInputs<T> build_inputs<T>(const Grid<T>&, const CostVolume<T>&, const CostVolume<T>&,      \
                                               const InputConfig&);
COLLABVN_INSTANTIATE(float)
COLLABVN_INSTANTIATE(double)
#undef COLLABVN_INSTANTIATE

}  // namespace collabvn
