#pragma once

// Little-endian binary container primitives shared by dataset and
// checkpoint files. Every file ends in a 64-bit FNV-1a checksum of all
// preceding bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saot/error.hpp"

namespace saot::io {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

/// Buffered writer that hashes everything it emits.
class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open '" + path + "' for writing");
  }

  void bytes(const void* data, std::size_t n) {
    hash_ = fnv1a(data, n, hash_);
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw FormatError("write failed on '" + path_ + "'");
  }
  template <class T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof v);
  }
  void u8(std::uint8_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }

  /// Appends the checksum (not itself hashed) and flushes.
  std::uint64_t finish() {
    const std::uint64_t h = hash_;
    out_.write(reinterpret_cast<const char*>(&h), sizeof h);
    out_.close();
    if (!out_) throw FormatError("write failed on '" + path_ + "'");
    return h;
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t hash_ = kFnvOffset;
};

/// Streaming reader; every short read is a FormatError naming the file.
class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open '" + path + "'");
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
    if (size_ < sizeof(std::uint64_t)) throw FormatError("'" + path + "' is truncated");
  }

  /// Bytes left before the trailing checksum.
  std::uint64_t remaining() const { return size_ - sizeof(std::uint64_t) - pos_; }

  void bytes(void* data, std::size_t n) {
    if (n > remaining()) throw FormatError("'" + path_ + "' is truncated");
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("'" + path_ + "' is truncated");
    hash_ = fnv1a(data, n, hash_);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  void doubles(std::span<double> v) { bytes(v.data(), v.size() * sizeof(double)); }
  std::string str(std::uint64_t max_len = 1 << 20) {
    const std::uint64_t n = u64();
    if (n > max_len || n > remaining()) throw FormatError("'" + path_ + "': bad string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (magic.size() > remaining()) throw FormatError("'" + path_ + "' is truncated");
    bytes(got.data(), got.size());
    if (got != magic) {
      throw FormatError("'" + path_ + "' is not a " + std::string(magic) + " file");
    }
  }

  /// Requires that the payload is fully consumed and the checksum matches.
  std::uint64_t finish() {
    if (remaining() != 0) {
      throw FormatError("'" + path_ + "' has " + std::to_string(remaining()) +
                        " unexpected trailing bytes");
    }
    std::uint64_t stored = 0;
    in_.read(reinterpret_cast<char*>(&stored), sizeof stored);
    if (!in_) throw FormatError("'" + path_ + "' is truncated");
    if (stored != hash_) throw FormatError("'" + path_ + "': checksum mismatch");
    return stored;
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t pos_ = 0;
  std::uint64_t hash_ = kFnvOffset;
};

/// Checksum stored in the last eight bytes of a container file.
inline std::uint64_t stored_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open '" + path + "'");
  const auto size = static_cast<std::streamoff>(in.tellg());
  if (size < 8) throw FormatError("'" + path + "' is truncated");
  in.seekg(size - 8);
  std::uint64_t h = 0;
  in.read(reinterpret_cast<char*>(&h), sizeof h);
  return h;
}

}  // namespace saot::io
