#pragma once

// Little-endian binary helpers shared by the store, cache, feature and
// checkpoint formats. Short reads raise FormatError.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "topo/error.hpp"

namespace topo::io {

template <typename T>
constexpr T byteswap_if_big(T value) {
  static_assert(std::is_integral_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    T out{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out = static_cast<T>((out << 8) | ((value >> (8 * i)) & 0xff));
    }
    return out;
  } else {
    return value;
  }
}

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open for writing: " + path.string());
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_.string());
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }

  template <typename T>
  void scalar(T value) {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      scalar(std::bit_cast<U>(value));
    } else {
      const T le = byteswap_if_big(value);
      bytes(&le, sizeof(T));
    }
  }
  void u8(std::uint8_t v) { scalar(v); }
  void u16(std::uint16_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }

  template <typename T>
  void array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (const T& v : values) scalar(v);
    }
  }

  void string16(std::string_view s) {
    if (s.size() > 0xffff) throw ParameterError("string too long for u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("flush failed: " + path_.string());
    out_.close();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path.string());
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0, std::ios::beg);
  }

  std::uint64_t size() const { return size_; }
  std::uint64_t remaining() const { return size_ - pos_; }

  void bytes(void* data, std::size_t n) {
    if (n > remaining()) {
      throw FormatError("truncated file: " + path_.string());
    }
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("read failed: " + path_.string());
    pos_ += n;
  }

  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    if (m.size() > remaining()) throw FormatError("file too short for header: " + path_.string());
    bytes(got.data(), got.size());
    if (got != m) {
      throw FormatError("bad magic in " + path_.string() + ": expected " + std::string(m));
    }
  }

  template <typename T>
  T scalar() {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<T>(scalar<U>());
    } else {
      T le{};
      bytes(&le, sizeof(T));
      return byteswap_if_big(le);
    }
  }
  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }

  template <typename T>
  void array(std::span<T> out) {
    if (out.size_bytes() > remaining()) {
      throw FormatError("truncated file: " + path_.string());
    }
    if constexpr (std::endian::native == std::endian::little) {
      bytes(out.data(), out.size_bytes());
    } else {
      for (T& v : out) v = scalar<T>();
    }
  }

  std::string string16() {
    std::string s(u16(), '\0');
    bytes(s.data(), s.size());
    return s;
  }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError("trailing bytes after payload in " + path_.string());
    }
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t pos_ = 0;
};

}  // namespace topo::io
