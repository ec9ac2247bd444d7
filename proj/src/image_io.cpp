#include "collabvn/image_io.hpp"

#include <png.h>

#include <bit>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <fmt/format.h>

namespace collabvn {

namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& header, const void* payload, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(n));
  if (!out) throw DataError(fmt::format("short write to '{}'", path.string()));
}

// Whitespace-separated ASCII header tokenizer shared by PFM and PNM.
class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::string token(bool allow_comments) {
    skip_space(allow_comments);
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("unexpected end of header", pos_);
    return {bytes_.data() + start, pos_ - start};
  }

  long integer(bool allow_comments) {
    const std::size_t at = pos_;
    const std::string t = token(allow_comments);
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0' || v <= 0) throw FormatError(fmt::format("invalid dimension '{}'", t), at);
    return v;
  }

  // Consumes exactly one whitespace character that separates header and payload.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("missing separator before payload", pos_);
    }
    return pos_ + 1;
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  void skip_space(bool allow_comments) {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (allow_comments && c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

float load_float(const char* p, bool little_endian) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  const bool host_little = std::endian::native == std::endian::little;
  if (little_endian != host_little) bits = __builtin_bswap32(bits);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// ---- libpng glue ---------------------------------------------------------

struct PngPixels {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
};

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool has_png_signature(const std::vector<char>& head) {
  static constexpr unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return head.size() >= 8 && std::memcmp(head.data(), sig, 8) == 0;
}

// Decodes a PNG, keeping 16-bit samples when present. Palette and low-depth gray
// images are expanded to 8 bits, alpha channels are stripped.
std::unique_ptr<PngPixels> decode_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError(fmt::format("cannot open '{}'", path.string()));
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(fmt::format("'{}' is not a PNG file", path.string()), 0);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  // Heap-held so that its state survives a longjmp out of libpng.
  auto px = std::make_unique<PngPixels>();
  if (setjmp(png_jmpbuf(png))) {
    const long offset = std::ftell(fp.get());
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(fmt::format("corrupt or truncated PNG '{}'", path.string()),
                      offset < 0 ? 0 : static_cast<std::size_t>(offset));
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  px->width = static_cast<int>(png_get_image_width(png, info));
  px->height = static_cast<int>(png_get_image_height(png, info));
  px->channels = png_get_channels(png, info);
  px->bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  px->bytes.resize(stride * px->height);
  px->rows.resize(px->height);
  for (int y = 0; y < px->height; ++y) px->rows[y] = px->bytes.data() + stride * y;
  png_read_image(png, px->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return px;
}

// `bytes` holds `height` packed rows; 16-bit samples are big-endian.
void encode_png(const fs::path& path, int width, int height, int channels, int bit_depth,
                const std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError(fmt::format("cannot write '{}'", path.string()));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  auto rows = std::make_unique<std::vector<png_bytep>>(height);
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    (*rows)[y] = const_cast<png_bytep>(bytes.data() + stride * y);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(fmt::format("failed writing PNG '{}'", path.string()));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Grid<float> read_pnm(const std::vector<char>& bytes, const fs::path& path) {
  HeaderReader hdr(bytes);
  const std::string magic = hdr.token(true);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError(fmt::format("'{}': unsupported PNM magic '{}'", path.string(), magic), 0);
  }
  const long w = hdr.integer(true);
  const long h = hdr.integer(true);
  const long maxval = hdr.integer(true);
  if (maxval > 65535) throw FormatError("PNM maxval exceeds 65535", hdr.position());
  const std::size_t start = hdr.payload_start();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * bps;
  if (bytes.size() - start < need) {
    throw FormatError(fmt::format("'{}': truncated PNM payload, need {} bytes", path.string(), need),
                      bytes.size());
  }
  Grid<float> out(static_cast<int>(h), static_cast<int>(w), channels);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        unsigned v = bps == 2 ? (p[0] << 8) | p[1] : p[0];
        p += bps;
        out.at(y, x, c) = static_cast<float>(v) / static_cast<float>(maxval);
      }
    }
  }
  return out;
}

bool has_extension(const fs::path& path, const char* ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace

Grid<float> read_pfm(const fs::path& path, Mask* invalid) {
  const std::vector<char> bytes = slurp(path);
  HeaderReader hdr(bytes);
  const std::string magic = hdr.token(false);
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw FormatError(fmt::format("'{}': bad PFM magic '{}'", path.string(), magic), 0);
  }
  const long w = hdr.integer(false);
  const long h = hdr.integer(false);
  const std::size_t scale_at = hdr.position();
  const std::string scale_tok = hdr.token(false);
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (*end != '\0' || scale == 0.0 || !std::isfinite(scale)) {
    throw FormatError(fmt::format("'{}': invalid PFM scale '{}'", path.string(), scale_tok), scale_at);
  }
  const bool little = scale < 0.0;
  const std::size_t start = hdr.payload_start();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * 4;
  if (bytes.size() < start || bytes.size() - start < need) {
    throw FormatError(fmt::format("'{}': truncated PFM payload, need {} bytes after header", path.string(), need),
                      bytes.size());
  }
  Grid<float> out(static_cast<int>(h), static_cast<int>(w), channels);
  if (invalid) *invalid = Mask(static_cast<int>(h), static_cast<int>(w), 1, 0);
  const char* p = bytes.data() + start;
  for (int row = 0; row < h; ++row) {
    const int y = static_cast<int>(h) - 1 - row;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        float v = load_float(p, little);
        p += 4;
        if (!std::isfinite(v)) {
          v = 0.0f;
          if (invalid) invalid->at(y, x) = 1;
        }
        out.at(y, x, c) = v;
      }
    }
  }
  return out;
}

void write_pfm(const Grid<float>& grid, const fs::path& path) {
  if (grid.channels() != 1 && grid.channels() != 3) {
    throw ConfigError(fmt::format("write_pfm: {} channels, PFM supports 1 or 3", grid.channels()));
  }
  const std::string header =
      fmt::format("{}\n{} {}\n-1.0\n", grid.channels() == 1 ? "Pf" : "PF", grid.width(), grid.height());
  std::vector<float> payload;
  payload.reserve(grid.size());
  for (int y = grid.height() - 1; y >= 0; --y) {
    for (int x = 0; x < grid.width(); ++x) {
      for (int c = 0; c < grid.channels(); ++c) payload.push_back(grid.at(y, x, c));
    }
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : payload) {
      std::uint32_t b;
      std::memcpy(&b, &f, 4);
      b = __builtin_bswap32(b);
      std::memcpy(&f, &b, 4);
    }
  }
  write_bytes(path, header, payload.data(), payload.size() * sizeof(float));
}

Grid<std::uint16_t> read_png16(const fs::path& path) {
  const auto px = decode_png(path);
  if (px->bit_depth != 16) {
    throw FormatError(fmt::format("'{}': bit depth {} != 16", path.string(), px->bit_depth), 24);
  }
  if (px->channels != 1) {
    throw FormatError(fmt::format("'{}': expected 1 channel, found {}", path.string(), px->channels), 25);
  }
  Grid<std::uint16_t> out(px->height, px->width, 1);
  for (int y = 0; y < px->height; ++y) {
    const png_bytep r = px->rows[y];
    for (int x = 0; x < px->width; ++x) out.at(y, x) = static_cast<std::uint16_t>((r[2 * x] << 8) | r[2 * x + 1]);
  }
  return out;
}

KittiDisparity read_kitti_disp(const fs::path& path) {
  const Grid<std::uint16_t> raw = read_png16(path);
  KittiDisparity out{Grid<float>(raw.height(), raw.width(), 1), Mask(raw.height(), raw.width(), 1, 0)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::uint16_t v = raw.data()[i];
    out.disparity.data()[i] = static_cast<float>(v) / 256.0f;
    out.valid.data()[i] = v != 0;
  }
  return out;
}

void write_kitti_disp(const Grid<float>& disparity, const Mask& valid, const fs::path& path) {
  if (disparity.channels() != 1) throw ConfigError("write_kitti_disp: disparity must have one channel");
  if (!valid.empty() && !valid.same_extent(disparity)) {
    throw ConfigError("write_kitti_disp: mask shape mismatch");
  }
  std::vector<std::uint8_t> bytes(disparity.size() * 2);
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    std::uint16_t v = 0;
    if (valid.empty() || valid.data()[i]) {
      const double s = std::round(static_cast<double>(disparity.data()[i]) * 256.0);
      v = static_cast<std::uint16_t>(std::clamp(std::isfinite(s) ? s : 1.0, 1.0, 65535.0));
    }
    bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  encode_png(path, disparity.width(), disparity.height(), 1, 16, bytes);
}

Grid<float> read_image(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  if (!has_png_signature(bytes)) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F')) return read_pfm(path);
    if (bytes.size() >= 2 && bytes[0] == 'P') return read_pnm(bytes, path);
    throw FormatError(fmt::format("'{}': unrecognised image format", path.string()), 0);
  }
  const auto px = decode_png(path);
  Grid<float> out(px->height, px->width, px->channels);
  const float maxval = px->bit_depth == 16 ? 65535.0f : 255.0f;
  for (int y = 0; y < px->height; ++y) {
    const png_bytep r = px->rows[y];
    for (int x = 0; x < px->width; ++x) {
      for (int c = 0; c < px->channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(x) * px->channels + c;
        const unsigned v = px->bit_depth == 16 ? (r[2 * i] << 8) | r[2 * i + 1] : r[i];
        out.at(y, x, c) = static_cast<float>(v) / maxval;
      }
    }
  }
  return out;
}

void write_png(const Grid<float>& image, const fs::path& path) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ConfigError(fmt::format("write_png: {} channels, expected 1 or 3", image.channels()));
  }
  std::vector<std::uint8_t> bytes(image.size());
  std::size_t i = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) bytes[i++] = to_byte(image.at(y, x, c));
    }
  }
  encode_png(path, image.width(), image.height(), image.channels(), 8, bytes);
}

void write_pnm(const Grid<float>& image, const fs::path& path) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ConfigError(fmt::format("write_pnm: {} channels, expected 1 or 3", image.channels()));
  }
  const std::string header =
      fmt::format("{}\n{} {}\n255\n", image.channels() == 3 ? "P6" : "P5", image.width(), image.height());
  std::vector<std::uint8_t> bytes;
  bytes.reserve(image.size());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) bytes.push_back(to_byte(image.at(y, x, c)));
    }
  }
  write_bytes(path, header, bytes.data(), bytes.size());
}

Grid<float> read_disparity(const fs::path& path, Mask* valid) {
  if (has_extension(path, ".pfm")) {
    Mask invalid;
    Grid<float> d = read_pfm(path, &invalid);
    if (d.channels() != 1) throw FormatError(fmt::format("'{}': disparity PFM must be 'Pf'", path.string()), 0);
    if (valid) {
      *valid = Mask(d.height(), d.width(), 1, 1);
      for (std::size_t i = 0; i < d.size(); ++i) valid->data()[i] = !invalid.data()[i];
    }
    return d;
  }
  if (has_extension(path, ".png")) {
    KittiDisparity k = read_kitti_disp(path);
    if (valid) *valid = std::move(k.valid);
    return std::move(k.disparity);
  }
  throw ConfigError(fmt::format("'{}': disparity files must be .pfm or .png", path.string()));
}

void write_disparity(const Grid<float>& disparity, const fs::path& path) {
  if (has_extension(path, ".pfm")) {
    write_pfm(disparity, path);
  } else if (has_extension(path, ".png")) {
    write_kitti_disp(disparity, Mask{}, path);
  } else {
    throw ConfigError(fmt::format("'{}': disparity files must be .pfm or .png", path.string()));
  }
}

Mask read_mask(const fs::path& path) {
  const std::vector<char> head = slurp(path);
  Mask m;
  if (has_png_signature(head)) {
    const auto px = decode_png(path);
    m = Mask(px->height, px->width, 1, 0);
    const std::size_t bytes_per_px = static_cast<std::size_t>(px->channels) * (px->bit_depth / 8);
    for (int y = 0; y < px->height; ++y) {
      const png_bytep r = px->rows[y];
      for (int x = 0; x < px->width; ++x) {
        bool set = false;
        for (std::size_t b = 0; b < bytes_per_px; ++b) set = set || r[x * bytes_per_px + b] != 0;
        m.at(y, x) = set;
      }
    }
    return m;
  }
  const Grid<float> g = read_pnm(head, path);
  m = Mask(g.height(), g.width(), 1, 0);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      bool set = false;
      for (int c = 0; c < g.channels(); ++c) set = set || g.at(y, x, c) != 0.0f;
      m.at(y, x) = set;
    }
  }
  return m;
}

template <typename T>
Grid<T> to_luma(const Grid<T>& image) {
  if (image.channels() == 1) return image;
  if (image.channels() != 3) throw ConfigError("to_luma: expected 1 or 3 channels");
  Grid<T> out(image.height(), image.width(), 1);
  auto r = image.plane(0);
  auto g = image.plane(1);
  auto b = image.plane(2);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<T>(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
  }
  return out;
}

template <typename T>
Grid<T> to_rgb(const Grid<T>& image) {
  if (image.channels() == 3) return image;
  if (image.channels() != 1) throw ConfigError("to_rgb: expected 1 or 3 channels");
  Grid<T> out(image.height(), image.width(), 3);
  for (int c = 0; c < 3; ++c) std::copy(image.data().begin(), image.data().end(), out.plane(c).begin());
  return out;
}

template Grid<float> to_luma<float>(const Grid<float>&);
template Grid<double> to_luma<double>(const Grid<double>&);
template Grid<float> to_rgb<float>(const Grid<float>&);
template Grid<double> to_rgb<double>(const Grid<double>&);

}  // namespace collabvn
