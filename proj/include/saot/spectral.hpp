#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "saot/fft.hpp"
#include "saot/ops.hpp"

namespace saot {

/// Scaling convention of a forward/inverse pair.
///   backward: forward unscaled, inverse scaled by 1/(H·W) (the default)
///   ortho:    both directions scaled by 1/sqrt(H·W)
enum class FftNorm { backward, ortho };

/// Per-channel 2-D Fourier coefficients of an H x W x C field. Mode
/// (k1, k2) with k1 in [0, H), k2 in [0, W) lives at row k1, column k2.
struct SpectralField {
  Tensor re;
  Tensor im;
  FftNorm norm = FftNorm::backward;

  std::size_t height() const { return re.dim(0); }
  std::size_t width() const { return re.dim(1); }
  std::size_t channels() const { return re.dim(2); }
};

enum class ImagPolicy {
  require_real,    // throw SymmetryError when the inverse is not real
  take_real_part,  // silently keep the real part
};

namespace detail {

inline void require_field(const Tensor& x, const char* op) {
  if (x.rank() != 3 || x.dim(0) < 1 || x.dim(1) < 1 || x.dim(2) < 1) {
    throw DimensionError(std::string(op) + ": expected H x W x C, got " + shape_string(x.shape()));
  }
}

inline double forward_scale(FftNorm norm, std::size_t n) {
  return norm == FftNorm::ortho ? 1.0 / std::sqrt(static_cast<double>(n)) : 1.0;
}
inline double inverse_scale(FftNorm norm, std::size_t n) {
  return norm == FftNorm::ortho ? 1.0 / std::sqrt(static_cast<double>(n))
                                : 1.0 / static_cast<double>(n);
}

// Picks the real (which = 0) or imaginary (which = 1) half of an
// H x W x C x 2 packed array.
inline Tensor complex_part(const Tensor& packed, std::size_t which) {
  Shape shape(packed.shape().begin(), packed.shape().end() - 1);
  const std::size_t n = numel(shape);
  std::vector<double> y(n);
  auto pv = packed.values();
  for (std::size_t i = 0; i < n; ++i) y[i] = pv[2 * i + which];
  return make_result(std::move(shape), std::move(y), {packed}, [n, which](Node& self) {
    if (auto* p = grad_target(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) p->grad[2 * i + which] += self.grad[i];
    }
  });
}

inline Tensor pack_complex(const Tensor& re, const Tensor& im) {
  require_same_shape(re, im, "pack_complex");
  const std::size_t n = re.size();
  Shape shape = re.shape();
  shape.push_back(2);
  std::vector<double> y(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    y[2 * i] = re[i];
    y[2 * i + 1] = im[i];
  }
  return make_result(std::move(shape), std::move(y), {re, im}, [n](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* p = grad_target(self, k)) {
        for (std::size_t i = 0; i < n; ++i) p->grad[i] += self.grad[2 * i + k];
      }
    }
  });
}

inline std::vector<fft::Complex> to_complex(std::span<const double> packed) {
  std::vector<fft::Complex> out(packed.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {packed[2 * i], packed[2 * i + 1]};
  return out;
}

}  // namespace detail

/// Per-channel 2-D DFT. Differentiable: the input gradient is the real part
/// of the adjoint transform applied to the upstream (re, im) gradient.
inline SpectralField fft2(const Tensor& x, FftNorm norm = FftNorm::backward) {
  detail::require_field(x, "fft2");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const double s = detail::forward_scale(norm, h * w);
  std::vector<fft::Complex> data(x.values().begin(), x.values().end());
  fft::transform_2d(data, h, w, c, false);
  std::vector<double> packed(2 * data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    packed[2 * i] = s * data[i].real();
    packed[2 * i + 1] = s * data[i].imag();
  }
  Tensor out = detail::make_result(Shape{h, w, c, 2}, std::move(packed), {x},
                                   [h, w, c, s](detail::Node& self) {
                                     auto* p = detail::grad_target(self, 0);
                                     if (!p) return;
                                     auto g = detail::to_complex(self.grad);
                                     fft::transform_2d(g, h, w, c, true);
                                     for (std::size_t i = 0; i < g.size(); ++i) {
                                       p->grad[i] += s * g[i].real();
                                     }
                                   });
  return {detail::complex_part(out, 0), detail::complex_part(out, 1), norm};
}

/// Inverse per-channel 2-D DFT under the field's recorded convention.
/// When `imag_residual` is given it receives max |Im| / max(1, max |Re|).
inline Tensor ifft2(const SpectralField& s, ImagPolicy policy = ImagPolicy::require_real,
                    double* imag_residual = nullptr) {
  detail::require_field(s.re, "ifft2");
  detail::require_same_shape(s.re, s.im, "ifft2");
  const std::size_t h = s.height(), w = s.width(), c = s.channels();
  const double scale = detail::inverse_scale(s.norm, h * w);
  Tensor packed = detail::pack_complex(s.re, s.im);
  auto data = detail::to_complex(packed.values());
  fft::transform_2d(data, h, w, c, true);
  std::vector<double> y(data.size());
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    y[i] = scale * data[i].real();
    max_re = std::max(max_re, std::abs(y[i]));
    max_im = std::max(max_im, std::abs(scale * data[i].imag()));
  }
  const double residual = max_im / std::max(1.0, max_re);
  if (imag_residual) *imag_residual = residual;
  if (policy == ImagPolicy::require_real && residual > 1e-8) {
    throw SymmetryError("ifft2: imaginary residual " + std::to_string(residual) +
                        " exceeds 1e-8; coefficients are not conjugate-symmetric");
  }
  return detail::make_result(Shape{h, w, c}, std::move(y), {packed},
                             [h, w, c, scale](detail::Node& self) {
                               auto* p = detail::grad_target(self, 0);
                               if (!p) return;
                               std::vector<fft::Complex> g(self.grad.begin(), self.grad.end());
                               fft::transform_2d(g, h, w, c, false);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 p->grad[2 * i] += scale * g[i].real();
                                 p->grad[2 * i + 1] += scale * g[i].imag();
                               }
                             });
}

// ---------------------------------------------------------------------- Haar

/// One-level 2-D Haar subbands, each (H/2) x (W/2) x C.
///
/// For the 2x2 block [[a, b], [c, d]] (rows 2i, 2i+1; columns 2j, 2j+1):
///   LL = (a+b+c+d)/2   LH = (a+b-c-d)/2   HL = (a-b+c-d)/2   HH = (a-b-c+d)/2
/// LH carries the difference across rows, HL the difference across columns.
struct WaveletSubbands {
  Tensor ll;
  Tensor lh;
  Tensor hl;
  Tensor hh;
};

namespace detail {

// x: H x W x C  ->  out: (H/2) x (W/2) x 4C, channel blocks [LL | LH | HL | HH].
inline void haar_analysis(std::span<const double> x, std::span<double> out, std::size_t h,
                          std::size_t w, std::size_t c) {
  const std::size_t h2 = h / 2, w2 = w / 2;
  for (std::size_t i = 0; i < h2; ++i) {
    for (std::size_t j = 0; j < w2; ++j) {
      const double* a = x.data() + ((2 * i) * w + 2 * j) * c;
      const double* b = a + c;
      const double* cc = a + w * c;
      const double* d = cc + c;
      double* o = out.data() + (i * w2 + j) * 4 * c;
      for (std::size_t k = 0; k < c; ++k) {
        o[k] = 0.5 * (a[k] + b[k] + cc[k] + d[k]);
        o[c + k] = 0.5 * (a[k] + b[k] - cc[k] - d[k]);
        o[2 * c + k] = 0.5 * (a[k] - b[k] + cc[k] - d[k]);
        o[3 * c + k] = 0.5 * (a[k] - b[k] - cc[k] + d[k]);
      }
    }
  }
}

// Exact inverse (and adjoint) of haar_analysis.
inline void haar_synthesis(std::span<const double> s, std::span<double> x, std::size_t h,
                           std::size_t w, std::size_t c) {
  const std::size_t h2 = h / 2, w2 = w / 2;
  for (std::size_t i = 0; i < h2; ++i) {
    for (std::size_t j = 0; j < w2; ++j) {
      const double* o = s.data() + (i * w2 + j) * 4 * c;
      double* a = x.data() + ((2 * i) * w + 2 * j) * c;
      double* b = a + c;
      double* cc = a + w * c;
      double* d = cc + c;
      for (std::size_t k = 0; k < c; ++k) {
        const double ll = o[k], lh = o[c + k], hl = o[2 * c + k], hh = o[3 * c + k];
        a[k] = 0.5 * (ll + lh + hl + hh);
        b[k] = 0.5 * (ll + lh - hl - hh);
        cc[k] = 0.5 * (ll - lh + hl - hh);
        d[k] = 0.5 * (ll - lh - hl + hh);
      }
    }
  }
}

}  // namespace detail

/// Haar analysis with the four subbands stacked along channels in the order
/// (LL, LH, HL, HH): H x W x C -> (H/2) x (W/2) x 4C.
inline Tensor haar_forward_stacked(const Tensor& x) {
  detail::require_field(x, "fwt_haar");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 || w % 2) {
    throw DimensionError("fwt_haar: spatial dimensions must be even, got " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.size());
  detail::haar_analysis(x.values(), out, h, w, c);
  return detail::make_result(Shape{h / 2, w / 2, 4 * c}, std::move(out), {x},
                             [h, w, c](detail::Node& self) {
                               auto* p = detail::grad_target(self, 0);
                               if (!p) return;
                               std::vector<double> g(self.grad.size());
                               detail::haar_synthesis(self.grad, g, h, w, c);
                               for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
                             });
}

/// Inverse of haar_forward_stacked: (H/2) x (W/2) x 4C -> H x W x C.
inline Tensor haar_inverse_stacked(const Tensor& s) {
  detail::require_field(s, "ifwt_haar");
  if (s.dim(2) % 4) {
    throw DimensionError("ifwt_haar: stacked channel count must be a multiple of 4, got " +
                         shape_string(s.shape()));
  }
  const std::size_t h = 2 * s.dim(0), w = 2 * s.dim(1), c = s.dim(2) / 4;
  std::vector<double> x(s.size());
  detail::haar_synthesis(s.values(), x, h, w, c);
  return detail::make_result(Shape{h, w, c}, std::move(x), {s}, [h, w, c](detail::Node& self) {
    auto* p = detail::grad_target(self, 0);
    if (!p) return;
    std::vector<double> g(self.grad.size());
    detail::haar_analysis(self.grad, g, h, w, c);
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  });
}

inline WaveletSubbands fwt_haar(const Tensor& x) {
  Tensor stacked = haar_forward_stacked(x);
  const std::size_t c = x.dim(2);
  return {slice_channels(stacked, 0, c), slice_channels(stacked, c, c),
          slice_channels(stacked, 2 * c, c), slice_channels(stacked, 3 * c, c)};
}

inline Tensor ifwt_haar(const WaveletSubbands& s) {
  for (const Tensor* t : {&s.lh, &s.hl, &s.hh}) {
    if (t->shape() != s.ll.shape()) {
      throw DimensionError("ifwt_haar: subband shapes differ: " + shape_string(s.ll.shape()) +
                           " vs " + shape_string(t->shape()));
    }
  }
  return haar_inverse_stacked(concat_channels({s.ll, s.lh, s.hl, s.hh}));
}

}  // namespace saot
