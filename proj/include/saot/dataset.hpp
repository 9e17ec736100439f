#pragma once

// Dataset container:
//
//   "SAOTDS1" u8 element tag (8 = f64) u64 sample count
//   per sample: u32 H, W, d_a, d_u, f64 a[H*W*d_a], f64 u[H*W*d_u]
//   u64 FNV-1a checksum of everything above
//
// Samples stream in and out one at a time; the checksum is verified once
// the last sample has been read.

#include <string>
#include <vector>

#include "saot/binary_io.hpp"
#include "saot/kv_config.hpp"
#include "saot/model.hpp"

namespace saot {

inline constexpr std::string_view kDatasetMagic = "SAOTDS1";
inline constexpr std::uint8_t kFloat64Tag = 8;

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, std::uint64_t count) : w_(path), count_(count) {
    w_.bytes(kDatasetMagic.data(), kDatasetMagic.size());
    w_.u8(kFloat64Tag);
    w_.u64(count);
  }

  void write(const GridSample& s) {
    if (written_ == count_) throw FormatError("dataset writer: more samples than declared");
    if (s.a.rank() != 3 || s.u.rank() != 3 || s.a.dim(0) != s.u.dim(0) || s.a.dim(1) != s.u.dim(1)) {
      throw DimensionError("dataset writer: sample shapes " + shape_string(s.a.shape()) + " and " +
                           shape_string(s.u.shape()) + " do not share a grid");
    }
    for (std::size_t d : {s.a.dim(0), s.a.dim(1), s.a.dim(2), s.u.dim(2)}) {
      w_.u32(static_cast<std::uint32_t>(d));
    }
    w_.doubles(s.a.values());
    w_.doubles(s.u.values());
    ++written_;
  }

  /// Appends the checksum and returns it.
  std::uint64_t finish() {
    if (written_ != count_) {
      throw FormatError("dataset writer: " + std::to_string(written_) + " of " +
                        std::to_string(count_) + " declared samples written");
    }
    return w_.finish();
  }

 private:
  io::Writer w_;
  std::uint64_t count_;
  std::uint64_t written_ = 0;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path) : r_(path) {
    r_.expect_magic(kDatasetMagic);
    if (const auto tag = r_.u8(); tag != kFloat64Tag) {
      throw FormatError("'" + path + "': unsupported element tag " + std::to_string(tag));
    }
    count_ = r_.u64();
    if (count_ > r_.remaining() / 16) throw FormatError("'" + path + "' is truncated");
    if (count_ == 0) r_.finish();
  }

  std::uint64_t count() const { return count_; }
  bool done() const { return read_ == count_; }

  /// Next sample; after the last one the checksum is checked.
  GridSample next() {
    if (done()) throw FormatError("'" + r_.path() + "': read past the last sample");
    std::size_t dims[4];
    for (auto& d : dims) d = r_.u32();
    const std::uint64_t cells = static_cast<std::uint64_t>(dims[0]) * dims[1];
    const std::uint64_t need = cells * (dims[2] + dims[3]) * sizeof(double);
    if (cells == 0 || dims[2] == 0 || dims[3] == 0 || need > r_.remaining()) {
      throw FormatError("'" + r_.path() + "': sample " + std::to_string(read_) +
                        " declares " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                        " with " + std::to_string(dims[2]) + "+" + std::to_string(dims[3]) +
                        " channels, which does not fit the file");
    }
    GridSample s{Tensor(Shape{dims[0], dims[1], dims[2]}), Tensor(Shape{dims[0], dims[1], dims[3]})};
    r_.doubles(s.a.values());
    r_.doubles(s.u.values());
    if (++read_ == count_) checksum_ = r_.finish();
    return s;
  }

  std::uint64_t checksum() const { return checksum_; }

 private:
  io::Reader r_;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
  std::uint64_t checksum_ = 0;
};

inline std::uint64_t write_dataset(const std::vector<GridSample>& samples, const std::string& path) {
  DatasetWriter w(path, samples.size());
  for (const auto& s : samples) w.write(s);
  return w.finish();
}

inline std::vector<GridSample> read_dataset(const std::string& path) {
  DatasetReader r(path);
  std::vector<GridSample> out;
  out.reserve(r.count());
  while (!r.done()) out.push_back(r.next());
  return out;
}

/// Generation settings stored next to a dataset as `<path>.cfg`.
inline std::string sidecar_path(const std::string& dataset_path) { return dataset_path + ".cfg"; }

}  // namespace saot
