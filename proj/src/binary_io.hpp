#pragma once

// Little-endian byte streams shared by the binary containers (CVOL1, FMAP1,
// VNCKPT01). Private to the library.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "collabvn/errors.hpp"

namespace collabvn::detail {

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void dump(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("short write to '{}'", path.string()));
}

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(p[i], p[sizeof(U) - 1 - i]);
  }
  return v;
}

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  template <typename U>
  void uint(U v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }

  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_little(v);
  }

  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }

  void expect_magic(std::string_view magic) {
    const std::size_t at = pos_;
    if (raw(magic.size(), "magic") != magic) throw FormatError("bad magic", at);
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(fmt::format("{} trailing bytes", remaining()), pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(fmt::format("truncated {}", what), pos_);
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace collabvn::detail
