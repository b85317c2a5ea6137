#pragma once

// Little-endian byte writer/reader for the versioned model containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "cardiac/error.hpp"

namespace cardiac::bin {

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  /// Appends the FNV-1a checksum of everything written so far.
  std::vector<std::uint8_t> finish() {
    const auto h = fnv1a(bytes_);
    put<std::uint64_t>(h);
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, ErrorCode corrupt) : bytes_(bytes), corrupt_(corrupt) {}

  /// Verifies and strips the trailing checksum.
  void verify_checksum() {
    if (bytes_.size() < 8) fail("missing checksum");
    const auto body = bytes_.first(bytes_.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes_.data() + body.size(), 8);
    if (stored != fnv1a(body)) fail("checksum mismatch");
    bytes_ = body;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t max_len = 1u << 24) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) fail("string too long");
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_bytes(std::span<const std::uint8_t> expected, ErrorCode code, const char* what) {
    if (bytes_.size() - pos_ < expected.size() || std::memcmp(bytes_.data() + pos_, expected.data(), expected.size()) != 0)
      throw Error(code, what);
    pos_ += expected.size();
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw Error(corrupt_, what); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  ErrorCode corrupt_;
};

}  // namespace cardiac::bin
