#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saot/layers.hpp"
#include "saot/spectral.hpp"

namespace saot {

// ------------------------------------------------------------- projections

struct QkvProjection {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  static QkvProjection create(ParameterStore& store, const std::string& prefix,
                              std::size_t width) {
    return {store.add_uniform(prefix + ".wq", Shape{width, width}, width),
            store.add_uniform(prefix + ".wk", Shape{width, width}, width),
            store.add_uniform(prefix + ".wv", Shape{width, width}, width)};
  }
};

struct Qkv {
  Tensor q;
  Tensor k;
  Tensor v;
};

/// q_j = x_j W^q, k_j = x_j W^k, v_j = x_j W^v. Bias-free.
inline Qkv project_qkv(const Tensor& x, const QkvProjection& p) {
  return {linear(x, p.wq), linear(x, p.wk), linear(x, p.wv)};
}

// ---------------------------------------------------------------- attention

/// O(n^2) softmax attention with temperature tau. Test oracle only; not
/// differentiable and never used by the model.
inline Tensor softmax_attention_reference(const Tensor& q, const Tensor& k, const Tensor& v,
                                          double tau) {
  if (!(tau > 0.0)) throw ConfigurationError("softmax_attention_reference: tau must be > 0");
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.dim(1) != q.dim(1) ||
      v.dim(0) != k.dim(0)) {
    throw DimensionError("softmax_attention_reference: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1), dv = v.dim(1);
  Tensor out(Shape{n, dv});
  std::vector<double> logits(m);
  for (std::size_t i = 0; i < n; ++i) {
    double top = -INFINITY;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
      logits[j] = s / tau;
      top = std::max(top, logits[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      logits[j] = std::exp(logits[j] - top);
      z += logits[j];
    }
    if (!std::isfinite(z) || !(z > 0.0)) {
      throw NumericError("softmax_attention_reference: normalizer overflow in row " +
                         std::to_string(i));
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < dv; ++c) out.values()[i * dv + c] += logits[j] / z * v[j * dv + c];
    }
  }
  return out;
}

namespace detail {

// s_i = fq_i^T (sum_j fk_j (x) v_j) / (fq_i^T sum_l fk_l + eps), with the
// two sums formed once. fq, fk are already feature-mapped (positive).
inline Tensor associative_attention(const Tensor& fq, const Tensor& fk, const Tensor& v,
                                    double eps) {
  const std::size_t n = fq.dim(0), d = fq.dim(1), dv = v.dim(1);
  std::vector<double> kv(d * dv, 0.0), z(d, 0.0);
  auto fkv = fk.values();
  auto vv = v.values();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t a = 0; a < d; ++a) {
      const double f = fkv[j * d + a];
      z[a] += f;
      double* row = kv.data() + a * dv;
      for (std::size_t c = 0; c < dv; ++c) row[c] += f * vv[j * dv + c];
    }
  }
  std::vector<double> out(n * dv, 0.0), den(n);
  auto fqv = fq.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = eps;
    double* o = out.data() + i * dv;
    for (std::size_t a = 0; a < d; ++a) {
      const double f = fqv[i * d + a];
      s += f * z[a];
      const double* row = kv.data() + a * dv;
      for (std::size_t c = 0; c < dv; ++c) o[c] += f * row[c];
    }
    den[i] = s;
    for (std::size_t c = 0; c < dv; ++c) o[c] /= s;
  }
  return make_result(
      Shape{n, dv}, std::move(out), {fq, fk, v},
      [n, d, dv, kv = std::move(kv), z = std::move(z), den = std::move(den)](Node& self) {
        const auto& fqv = self.parents[0]->value;
        const auto& fkv = self.parents[1]->value;
        const auto& vv = self.parents[2]->value;
        auto* pq = grad_target(self, 0);
        auto* pk = grad_target(self, 1);
        auto* pv = grad_target(self, 2);
        std::vector<double> g_kv(d * dv, 0.0), g_z(d, 0.0), g_num(dv);
        for (std::size_t i = 0; i < n; ++i) {
          const double* g = self.grad.data() + i * dv;
          const double* o = self.value.data() + i * dv;
          double g_den = 0.0;
          for (std::size_t c = 0; c < dv; ++c) {
            g_num[c] = g[c] / den[i];
            g_den -= g[c] * o[c] / den[i];
          }
          for (std::size_t a = 0; a < d; ++a) {
            const double f = fqv[i * d + a];
            const double* row = kv.data() + a * dv;
            double* grow = g_kv.data() + a * dv;
            double s = 0.0;
            for (std::size_t c = 0; c < dv; ++c) {
              s += row[c] * g_num[c];
              grow[c] += f * g_num[c];
            }
            if (pq) pq->grad[i * d + a] += s + z[a] * g_den;
            g_z[a] += g_den * f;
          }
        }
        std::vector<double> gv(pv ? n * dv : 0, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t a = 0; a < d; ++a) {
            const double* grow = g_kv.data() + a * dv;
            if (pk) {
              double s = g_z[a];
              for (std::size_t c = 0; c < dv; ++c) s += grow[c] * vv[j * dv + c];
              pk->grad[j * d + a] += s;
            }
            if (pv) {
              const double f = fkv[j * d + a];
              for (std::size_t c = 0; c < dv; ++c) gv[j * dv + c] += f * grow[c];
            }
          }
        }
        accumulate(pv, gv);
      });
}

}  // namespace detail

inline constexpr double kLinearAttentionEps = 1e-6;

/// Linearized attention with feature map elu(x) + 1. O(n·D²) work.
inline Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               double eps = kLinearAttentionEps) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.dim(0) != q.dim(0)) {
    throw DimensionError("linear_attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  return detail::associative_attention(elu_plus_one(q), elu_plus_one(k), v, eps);
}

// ---------------------------------------------------------- Fourier attention

/// Block-wise two-layer MLP acting on complex Fourier modes. Channels are
/// split into `blocks` groups of width/blocks; every mode shares the weights.
struct FourierAttentionParams {
  Tensor w1_re, w1_im;  // blocks x bs x hidden
  Tensor b1_re, b1_im;  // blocks*hidden
  Tensor w2_re, w2_im;  // blocks x hidden x bs
  Tensor b2_re;         // width; a constant imaginary output bias would be
                        // annihilated by the real-part projection, so none
  std::size_t blocks = 4;
  Activation activation = Activation::gelu;
  FftNorm norm = FftNorm::ortho;  // keeps mode magnitudes O(1) in front of the nonlinearity

  static FourierAttentionParams create(ParameterStore& store, const std::string& prefix,
                                       std::size_t width, std::size_t blocks,
                                       std::size_t hidden_ratio) {
    if (blocks == 0 || width % blocks) {
      throw ConfigurationError("fourier attention: block count " + std::to_string(blocks) +
                               " must divide width " + std::to_string(width));
    }
    if (hidden_ratio == 0) throw ConfigurationError("fourier attention: hidden ratio must be >= 1");
    const std::size_t bs = width / blocks, hidden = bs * hidden_ratio;
    FourierAttentionParams p;
    p.blocks = blocks;
    p.w1_re = store.add_uniform(prefix + ".w1_re", Shape{blocks, bs, hidden}, bs);
    p.w1_im = store.add_uniform(prefix + ".w1_im", Shape{blocks, bs, hidden}, bs);
    p.b1_re = store.add_constant(prefix + ".b1_re", Shape{blocks * hidden}, 0.0);
    p.b1_im = store.add_constant(prefix + ".b1_im", Shape{blocks * hidden}, 0.0);
    p.w2_re = store.add_uniform(prefix + ".w2_re", Shape{blocks, hidden, bs}, hidden);
    p.w2_im = store.add_uniform(prefix + ".w2_im", Shape{blocks, hidden, bs}, hidden);
    p.b2_re = store.add_constant(prefix + ".b2_re", Shape{width}, 0.0);
    return p;
  }

  /// Test mode: R_psi becomes the exact identity on every mode. Needs a
  /// hidden ratio of 1.
  void set_identity() {
    const std::size_t bs = w1_re.dim(1);
    if (w1_re.dim(2) != bs) {
      throw ConfigurationError("fourier attention: identity mode needs hidden ratio 1");
    }
    set_zero();
    activation = Activation::identity;
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t i = 0; i < bs; ++i) {
        w1_re.values()[(b * bs + i) * bs + i] = 1.0;
        w2_re.values()[(b * bs + i) * bs + i] = 1.0;
      }
    }
  }

  /// Test mode: every weight and bias zero, so R_psi maps everything to 0.
  void set_zero() {
    for (Tensor* t : {&w1_re, &w1_im, &b1_re, &b1_im, &w2_re, &w2_im, &b2_re}) {
      std::fill(t->values().begin(), t->values().end(), 0.0);
    }
  }
};

namespace detail {

// (re + i·im)(Wr + i·Wi) + (br + i·bi), block-diagonally. Either bias may
// be undefined.
inline std::pair<Tensor, Tensor> complex_block_linear(const Tensor& re, const Tensor& im,
                                                      const Tensor& wr, const Tensor& wi,
                                                      const Tensor& br, const Tensor& bi) {
  Tensor out_re = sub(block_linear(re, wr), block_linear(im, wi));
  Tensor out_im = add(block_linear(re, wi), block_linear(im, wr));
  if (br.defined()) out_re = add_bias(out_re, br);
  if (bi.defined()) out_im = add_bias(out_im, bi);
  return {out_re, out_im};
}

}  // namespace detail

/// R_psi applied independently at every Fourier mode. The nonlinearity acts
/// on the real and imaginary parts separately.
inline SpectralField spectral_mlp(const SpectralField& s, const FourierAttentionParams& p) {
  auto [h_re, h_im] =
      detail::complex_block_linear(s.re, s.im, p.w1_re, p.w1_im, p.b1_re, p.b1_im);
  h_re = activate(h_re, p.activation);
  h_im = activate(h_im, p.activation);
  auto [o_re, o_im] = detail::complex_block_linear(h_re, h_im, p.w2_re, p.w2_im, p.b2_re, Tensor());
  return {o_re, o_im, s.norm};
}

/// X + real(ifft2(R_psi(fft2(X)))). Every mode is kept; nothing is truncated.
inline Tensor fourier_attention(const Tensor& x, const FourierAttentionParams& p) {
  detail::require_field(x, "fourier_attention");
  if (x.dim(2) != p.w1_re.dim(0) * p.w1_re.dim(1)) {
    throw DimensionError("fourier_attention: input " + shape_string(x.shape()) +
                         " vs block weights " + shape_string(p.w1_re.shape()));
  }
  SpectralField mixed = spectral_mlp(fft2(x, p.norm), p);
  return add(x, ifft2(mixed, ImagPolicy::take_real_part));
}

// ---------------------------------------------------------- Wavelet attention

/// Pipeline: 1x1 channel reduce D -> D/4, Haar FWT, optional 3x3 conv,
/// linearized attention over the (H/2)(W/2) subband tokens, inverse FWT,
/// concat with the input and a final linear (D + D/4) -> D.
struct WaveletAttentionParams {
  LinearParams reduce;
  Tensor local_kernel;  // 3 x 3 x D x D, undefined when disabled
  Tensor local_bias;
  QkvProjection qkv;
  LinearParams out;
  bool use_locality_conv = true;

  std::size_t width() const { return reduce.weight.dim(0); }

  static WaveletAttentionParams create(ParameterStore& store, const std::string& prefix,
                                       std::size_t width, bool use_locality_conv) {
    if (width == 0 || width % 4) {
      throw ConfigurationError("wavelet attention: width " + std::to_string(width) +
                               " must be a positive multiple of 4");
    }
    WaveletAttentionParams p;
    p.use_locality_conv = use_locality_conv;
    p.reduce = LinearParams::create(store, prefix + ".reduce", width, width / 4);
    if (use_locality_conv) {
      p.local_kernel = store.add_uniform(prefix + ".local.weight", Shape{3, 3, width, width},
                                         9 * width);
      p.local_bias = store.add_constant(prefix + ".local.bias", Shape{width}, 0.0);
    }
    p.qkv = QkvProjection::create(store, prefix + ".qkv", width);
    p.out = LinearParams::create(store, prefix + ".out", width + width / 4, width);
    return p;
  }
};

/// Intermediates of one wavelet_attention call, for inspection in tests.
struct WaveletTrace {
  Tensor reduced;        // X̄: H x W x D/4
  Tensor subbands;       // X̃: (H/2) x (W/2) x D, order (LL, LH, HL, HH)
  Tensor local;          // X^w
  Tensor attended;       // S': n x D
  Tensor reconstructed;  // X^r: H x W x D/4
};

inline Tensor wavelet_attention(const Tensor& x, const WaveletAttentionParams& p,
                                WaveletTrace* trace = nullptr) {
  detail::require_field(x, "wavelet_attention");
  const std::size_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
  if (d != p.width()) {
    throw DimensionError("wavelet_attention: input " + shape_string(x.shape()) +
                         " vs width " + std::to_string(p.width()));
  }
  if (h % 2 || w % 2) {
    throw DimensionError("wavelet_attention: spatial dimensions must be even, got " +
                         shape_string(x.shape()));
  }
  Tensor reduced = linear_forward(x, p.reduce);
  Tensor subbands = haar_forward_stacked(reduced);
  Tensor local = p.use_locality_conv ? conv3x3_same(subbands, p.local_kernel, p.local_bias)
                                     : subbands;
  Tensor tokens = reshape(local, Shape{(h / 2) * (w / 2), d});
  Qkv qkv = project_qkv(tokens, p.qkv);
  Tensor attended = linear_attention(qkv.q, qkv.k, qkv.v);
  Tensor reconstructed = haar_inverse_stacked(reshape(attended, Shape{h / 2, w / 2, d}));
  Tensor y = linear_forward(concat_channels({x, reconstructed}), p.out);
  if (trace) *trace = {reduced, subbands, local, attended, reconstructed};
  return y;
}

// ------------------------------------------------------------- gated fusion

struct GatedFusionParams {
  LinearParams gate;  // 2D -> D

  static GatedFusionParams create(ParameterStore& store, const std::string& prefix,
                                  std::size_t width) {
    return {LinearParams::create(store, prefix + ".gate", 2 * width, width)};
  }
};

/// G = sigmoid(Linear(concat(a, b))); G ⊙ a + (1 - G) ⊙ b.
inline Tensor gated_fusion(const Tensor& fa, const Tensor& wa, const GatedFusionParams& p,
                           Tensor* gate_out = nullptr) {
  detail::require_same_shape(fa, wa, "gated_fusion");
  if (p.gate.weight.dim(0) != 2 * fa.shape().back()) {
    throw DimensionError("gated_fusion: input " + shape_string(fa.shape()) + " vs gate weight " +
                         shape_string(p.gate.weight.shape()));
  }
  Tensor gate = sigmoid(linear_forward(concat_channels({fa, wa}), p.gate));
  if (gate_out) *gate_out = gate;
  return add(wa, mul(gate, sub(fa, wa)));
}

// ------------------------------------------------------- spectral attention

enum class AttentionVariant { fourier, wavelet, spectral };

inline std::string_view variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::fourier: return "fa";
    case AttentionVariant::wavelet: return "wa";
    case AttentionVariant::spectral: return "sa";
  }
  return "?";
}

inline AttentionVariant parse_variant(std::string_view s) {
  if (s == "fa") return AttentionVariant::fourier;
  if (s == "wa") return AttentionVariant::wavelet;
  if (s == "sa") return AttentionVariant::spectral;
  throw ConfigurationError("unknown attention variant '" + std::string(s) +
                           "' (expected fa, wa or sa)");
}

/// FA and WA on the same input, merged by the gate. Single-branch variants
/// skip the gate and return their branch directly.
struct SpectralAttentionParams {
  AttentionVariant variant = AttentionVariant::spectral;
  std::optional<FourierAttentionParams> fourier;
  std::optional<WaveletAttentionParams> wavelet;
  std::optional<GatedFusionParams> fusion;

  static SpectralAttentionParams create(ParameterStore& store, const std::string& prefix,
                                        AttentionVariant variant, std::size_t width,
                                        std::size_t fa_blocks, std::size_t fa_hidden_ratio,
                                        bool use_locality_conv) {
    SpectralAttentionParams p;
    p.variant = variant;
    if (variant != AttentionVariant::wavelet) {
      p.fourier = FourierAttentionParams::create(store, prefix + ".fa", width, fa_blocks,
                                                 fa_hidden_ratio);
    }
    if (variant != AttentionVariant::fourier) {
      p.wavelet =
          WaveletAttentionParams::create(store, prefix + ".wa", width, use_locality_conv);
    }
    if (variant == AttentionVariant::spectral) {
      p.fusion = GatedFusionParams::create(store, prefix + ".fusion", width);
    }
    return p;
  }
};

inline Tensor spectral_attention(const Tensor& x, const SpectralAttentionParams& p) {
  switch (p.variant) {
    case AttentionVariant::fourier: return fourier_attention(x, *p.fourier);
    case AttentionVariant::wavelet: return wavelet_attention(x, *p.wavelet);
    case AttentionVariant::spectral:
      break;
  }
  return gated_fusion(fourier_attention(x, *p.fourier), wavelet_attention(x, *p.wavelet),
                      *p.fusion);
}

}  // namespace saot
