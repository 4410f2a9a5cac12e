#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "svox/error.hpp"

namespace svox::binary {

/// Little-endian append-only byte sink.
class Writer {
public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void i16(std::int16_t v) { uint(static_cast<std::uint16_t>(v)); }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> v) {
    buf_.reserve(buf_.size() + 4 * v.size());
    for (float x : v) f32(x);
  }
  void zeros(std::size_t n) { buf_.insert(buf_.end(), n, 0); }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian cursor over a byte buffer. Failures carry
/// the byte offset at which the read was attempted.
class Reader {
public:
  Reader(std::span<const std::uint8_t> data, std::string module)
      : data_(data), module_(std::move(module)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void seek(std::size_t pos) {
    if (pos > data_.size()) fail(pos, "seek past end of file");
    pos_ = pos;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (remaining() < n)
      fail(pos_, std::string("truncated ") + what + " (need " + std::to_string(n) + " bytes, have " +
                     std::to_string(remaining()) + ")");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint(const char* what) {
    auto s = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }
  std::uint16_t u16(const char* w) { return uint<std::uint16_t>(w); }
  std::uint32_t u32(const char* w) { return uint<std::uint32_t>(w); }
  std::uint64_t u64(const char* w) { return uint<std::uint64_t>(w); }
  std::int16_t i16(const char* w) { return static_cast<std::int16_t>(u16(w)); }
  std::int32_t i32(const char* w) { return static_cast<std::int32_t>(u32(w)); }
  float f32(const char* w) { return std::bit_cast<float>(u32(w)); }

  [[noreturn]] void fail(std::size_t at, const std::string& msg) const {
    throw Error(module_, msg + " at byte offset " + std::to_string(at));
  }

private:
  std::span<const std::uint8_t> data_;
  std::string module_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path, const std::string& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(module, "cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                       const std::string& module) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(module, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(module, "write to '" + path.string() + "' failed");
}

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace svox::binary
