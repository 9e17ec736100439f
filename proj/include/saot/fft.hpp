#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace saot::fft {

using Complex = std::complex<double>;

/// 1-D complex DFT of a fixed length. Powers of two use an iterative
/// radix-2 kernel; every other length goes through Bluestein's chirp-z
/// algorithm on top of a power-of-two plan.
class Plan {
 public:
  explicit Plan(std::size_t n) : n_(n) {
    if (n_ <= 1) return;
    if (std::has_single_bit(n_)) {
      twiddles_.resize(n_ / 2);
      for (std::size_t k = 0; k < n_ / 2; ++k) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / n_;
        twiddles_[k] = {std::cos(angle), std::sin(angle)};
      }
      return;
    }
    const std::size_t m = std::bit_ceil(2 * n_ - 1);
    inner_ = std::make_unique<Plan>(m);
    chirp_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2n keeps the angle argument small for large k.
      const std::size_t k2 = (k * k) % (2 * n_);
      const double angle = -std::numbers::pi * static_cast<double>(k2) / n_;
      chirp_[k] = {std::cos(angle), std::sin(angle)};
    }
    kernel_.assign(m, Complex{});
    kernel_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) {
      kernel_[k] = std::conj(chirp_[k]);
      kernel_[m - k] = std::conj(chirp_[k]);
    }
    inner_->forward(kernel_);
  }

  std::size_t size() const { return n_; }

  /// In place, X_k = sum_j x_j exp(-2 pi i jk / n). Unscaled.
  void forward(std::span<Complex> data) const {
    if (n_ <= 1) return;
    if (twiddles_.empty()) {
      bluestein(data);
    } else {
      radix2(data);
    }
  }

  /// In place, x_j = sum_k X_k exp(+2 pi i jk / n). Unscaled.
  void inverse(std::span<Complex> data) const {
    for (auto& v : data) v = std::conj(v);
    forward(data);
    for (auto& v : data) v = std::conj(v);
  }

 private:
  void radix2(std::span<Complex> a) const {
    const std::size_t n = n_;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2, stride = n / len;
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const Complex t = twiddles_[k * stride] * a[start + k + half];
          a[start + k + half] = a[start + k] - t;
          a[start + k] += t;
        }
      }
    }
  }

  void bluestein(std::span<Complex> data) const {
    const std::size_t m = inner_->size();
    std::vector<Complex> work(m, Complex{});
    for (std::size_t k = 0; k < n_; ++k) work[k] = data[k] * chirp_[k];
    inner_->forward(work);
    for (std::size_t k = 0; k < m; ++k) work[k] *= kernel_[k];
    inner_->inverse(work);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n_; ++k) data[k] = work[k] * chirp_[k] * scale;
  }

  std::size_t n_;
  std::vector<Complex> twiddles_;
  std::unique_ptr<Plan> inner_;
  std::vector<Complex> chirp_;
  std::vector<Complex> kernel_;
};

inline const Plan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<Plan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan>(n);
  return *slot;
}

/// Unscaled 2-D transform of every channel of an H x W x C row-major array.
inline void transform_2d(std::span<Complex> data, std::size_t h, std::size_t w, std::size_t c,
                         bool inverse) {
  const Plan& row_plan = plan_for(w);
  const Plan& col_plan = plan_for(h);
  std::vector<Complex> line(std::max(h, w));
  auto run = [inverse](const Plan& p, std::span<Complex> v) {
    inverse ? p.inverse(v) : p.forward(v);
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) line[j] = data[(i * w + j) * c + ch];
      run(row_plan, std::span(line.data(), w));
      for (std::size_t j = 0; j < w; ++j) data[(i * w + j) * c + ch] = line[j];
    }
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t i = 0; i < h; ++i) line[i] = data[(i * w + j) * c + ch];
      run(col_plan, std::span(line.data(), h));
      for (std::size_t i = 0; i < h; ++i) data[(i * w + j) * c + ch] = line[i];
    }
  }
}

}  // namespace saot::fft
