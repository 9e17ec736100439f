#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "saot/tensor.hpp"

namespace saot {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Leading dimensions collapsed into rows; the last axis is the channel axis.
inline std::size_t row_count(const Tensor& x) { return x.size() / x.shape().back(); }

inline Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> y(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result(x.shape(), std::move(y), {x}, [df](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      px->grad[i] += self.grad[i] * df(px->value[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* p = detail::grad_target(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
    if (auto* p = detail::grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
    if (auto* p = detail::grad_target(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
    auto* pa = detail::grad_target(self, 0);
    auto* pb = detail::grad_target(self, 1);
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa) pa->grad[i] += self.grad[i] * bv[i];
      if (pb) pb->grad[i] += self.grad[i] * av[i];
    }
  });
}

/// x + bias, the bias broadcast along every row of the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (bias.size() != d) {
    throw DimensionError("add_bias: input " + shape_string(x.shape()) + " vs bias " +
                         shape_string(bias.shape()));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % d];
  return detail::make_result(x.shape(), std::move(y), {x, bias}, [d](detail::Node& self) {
    if (auto* p = detail::grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
    if (auto* p = detail::grad_target(self, 1)) {
      std::vector<double> gb(d, 0.0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += self.grad[i];
      detail::accumulate(p, gb);
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; },
                       [s](double, double) { return s; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

/// elu(x) + 1, the positive feature map of linearized attention.
inline Tensor elu_plus_one(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v + 1.0 : std::exp(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y; });
}

/// Exact (erf-based) Gaussian error linear unit.
inline Tensor gelu(const Tensor& x) {
  using std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return detail::unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v / sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

enum class Activation { gelu, identity };

inline Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : x;
}

// ------------------------------------------------------------------ reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result(Shape{1}, {s}, {x}, [](detail::Node& self) {
    if (auto* p = detail::grad_target(self, 0)) {
      for (double& g : p->grad) g += self.grad[0];
    }
  });
}

/// ||pred - target|| / ||target|| over every entry of the pair.
inline Tensor relative_l2(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "relative_l2");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    num += d * d;
    den += target[i] * target[i];
  }
  if (!(den > 0.0)) throw MetricError("relative_l2: target has zero norm");
  const double nn = std::sqrt(num), dn = std::sqrt(den);
  return detail::make_result(Shape{1}, {nn / dn}, {pred, target}, [nn, dn](detail::Node& self) {
    auto* pp = detail::grad_target(self, 0);
    auto* pt = detail::grad_target(self, 1);
    const auto& pv = self.parents[0]->value;
    const auto& tv = self.parents[1]->value;
    const double g = self.grad[0];
    const double r = nn / dn;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = pv[i] - tv[i];
      const double dr_dd = nn > 0.0 ? d / (nn * dn) : 0.0;
      if (pp) pp->grad[i] += g * dr_dd;
      if (pt) pt->grad[i] += g * (-dr_dd - r * tv[i] / (dn * dn));
    }
  });
}

// -------------------------------------------------------------------- layout

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  return detail::make_result(std::move(shape), std::move(y), {x}, [](detail::Node& self) {
    if (auto* p = detail::grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

/// Concatenation along the last axis; all leading dimensions must agree.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& lead = parts.front().shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != lead.size() || !std::equal(lead.begin(), lead.end() - 1, p.shape().begin())) {
      throw DimensionError("concat_channels: " + shape_string(lead) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const std::size_t rows = detail::row_count(parts.front());
  std::vector<double> y(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + r * widths[k], widths[k], y.begin() + r * total + offset);
    }
    offset += widths[k];
  }
  return detail::make_result(
      detail::with_last(lead, total), std::move(y), parts,
      [widths, rows, total](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (auto* p = detail::grad_target(self, k)) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < widths[k]; ++c) {
                p->grad[r * widths[k] + c] += self.grad[r * total + off + c];
              }
            }
          }
          off += widths[k];
        }
      });
}

/// Channels [begin, begin + count) of the last axis.
inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t width = x.shape().back();
  if (begin + count > width) {
    throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_string(x.shape()));
  }
  const std::size_t rows = detail::row_count(x);
  std::vector<double> y(rows * count);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + r * width + begin, count, y.begin() + r * count);
  }
  return detail::make_result(detail::with_last(x.shape(), count), std::move(y), {x},
                             [rows, width, begin, count](detail::Node& self) {
                               auto* p = detail::grad_target(self, 0);
                               if (!p) return;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < count; ++c) {
                                   p->grad[r * width + begin + c] += self.grad[r * count + c];
                                 }
                               }
                             });
}

// -------------------------------------------------------------------- layers

/// y = x W + b over the last axis of x. `bias` may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t din = weight.dim(0), dout = weight.dim(1);
  if (bias.defined() && bias.size() != dout) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t rows = detail::row_count(x);
  std::vector<double> y(rows * dout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  for (std::size_t i = 0; i < rows; ++i) {
    double* yr = y.data() + i * dout;
    if (bias.defined()) std::copy_n(bias.values().begin(), dout, yr);
    for (std::size_t k = 0; k < din; ++k) {
      const double xik = xv[i * din + k];
      const double* wr = wv.data() + k * dout;
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xik * wr[j];
    }
  }
  return detail::make_result(
      detail::with_last(x.shape(), dout), std::move(y), {x, weight, bias},
      [rows, din, dout](detail::Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        const double* g = self.grad.data();
        if (auto* px = detail::grad_target(self, 0)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t k = 0; k < din; ++k) {
              double s = 0.0;
              const double* wr = wv.data() + k * dout;
              for (std::size_t j = 0; j < dout; ++j) s += g[i * dout + j] * wr[j];
              px->grad[i * din + k] += s;
            }
          }
        }
        if (auto* pw = detail::grad_target(self, 1)) {
          std::vector<double> gw(din * dout, 0.0);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t k = 0; k < din; ++k) {
              const double xik = xv[i * din + k];
              double* row = gw.data() + k * dout;
              for (std::size_t j = 0; j < dout; ++j) row[j] += xik * g[i * dout + j];
            }
          }
          detail::accumulate(pw, gw);
        }
        if (auto* pb = detail::grad_target(self, 2)) {
          std::vector<double> gb(dout, 0.0);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
          }
          detail::accumulate(pb, gb);
        }
      });
}

/// Block-diagonal linear map: channel block b of x (width in) is multiplied
/// by weight[b] (in x out). Weight shape is blocks x in x out.
inline Tensor block_linear(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 3 || x.shape().back() != weight.dim(0) * weight.dim(1)) {
    throw DimensionError("block_linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t nb = weight.dim(0), bi = weight.dim(1), bo = weight.dim(2);
  const std::size_t rows = detail::row_count(x), din = nb * bi, dout = nb * bo;
  std::vector<double> y(rows * dout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t b = 0; b < nb; ++b) {
      double* yr = y.data() + i * dout + b * bo;
      for (std::size_t k = 0; k < bi; ++k) {
        const double xik = xv[i * din + b * bi + k];
        const double* wr = wv.data() + (b * bi + k) * bo;
        for (std::size_t j = 0; j < bo; ++j) yr[j] += xik * wr[j];
      }
    }
  }
  return detail::make_result(
      detail::with_last(x.shape(), dout), std::move(y), {x, weight},
      [rows, nb, bi, bo, din, dout](detail::Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        auto* px = detail::grad_target(self, 0);
        auto* pw = detail::grad_target(self, 1);
        std::vector<double> gw(pw ? nb * bi * bo : 0, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t b = 0; b < nb; ++b) {
            const double* g = self.grad.data() + i * dout + b * bo;
            for (std::size_t k = 0; k < bi; ++k) {
              const std::size_t xi = i * din + b * bi + k;
              const std::size_t wr = (b * bi + k) * bo;
              if (px) {
                double s = 0.0;
                for (std::size_t j = 0; j < bo; ++j) s += g[j] * wv[wr + j];
                px->grad[xi] += s;
              }
              if (pw) {
                const double xik = xv[xi];
                for (std::size_t j = 0; j < bo; ++j) gw[wr + j] += xik * g[j];
              }
            }
          }
        }
        detail::accumulate(pw, gw);
      });
}

/// Per-row normalization over the last axis, eps inside the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (d < 1 || gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " vs gamma " +
                         shape_string(gamma.shape()) + ", beta " + shape_string(beta.shape()));
  }
  const std::size_t rows = detail::row_count(x);
  std::vector<double> y(x.size()), xhat(x.size()), inv_std(rows);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    if (!std::isfinite(mean) || !std::isfinite(var)) {
      throw NumericError("layer_norm: non-finite input in row " + std::to_string(r));
    }
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * inv_std[r];
      y[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    }
  }
  return detail::make_result(
      x.shape(), std::move(y), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gv = self.parents[1]->value;
        auto* px = detail::grad_target(self, 0);
        auto* pg = detail::grad_target(self, 1);
        auto* pb = detail::grad_target(self, 2);
        std::vector<double> gxhat(d), gg(d, 0.0), gb(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* xh = xhat.data() + r * d;
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            gxhat[c] = g[c] * gv[c];
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xh[c];
            gg[c] += g[c] * xh[c];
            gb[c] += g[c];
          }
          if (!px) continue;
          mean_g /= static_cast<double>(d);
          mean_gx /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            px->grad[r * d + c] += inv_std[r] * (gxhat[c] - mean_g - xh[c] * mean_gx);
          }
        }
        detail::accumulate(pg, gg);
        detail::accumulate(pb, gb);
      });
}

/// Stride-1 3x3 cross-correlation with one cell of zero padding.
/// x: H x W x Cin, kernel: 3 x 3 x Cin x Cout, bias: Cout (may be undefined).
inline Tensor conv3x3_same(const Tensor& x, const Tensor& kernel, const Tensor& bias = Tensor()) {
  if (x.rank() != 3 || kernel.rank() != 4 || kernel.dim(0) != 3 || kernel.dim(1) != 3 ||
      kernel.dim(2) != x.dim(2)) {
    throw DimensionError("conv3x3_same: input " + shape_string(x.shape()) + " vs kernel " +
                         shape_string(kernel.shape()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = kernel.dim(3);
  if (bias.defined() && bias.size() != cout) {
    throw DimensionError("conv3x3_same: bias " + shape_string(bias.shape()) + " vs kernel " +
                         shape_string(kernel.shape()));
  }
  std::vector<double> y(h * w * cout, 0.0);
  auto xv = x.values();
  auto kv = kernel.values();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double* yr = y.data() + (i * w + j) * cout;
      if (bias.defined()) std::copy_n(bias.values().begin(), cout, yr);
      for (std::size_t di = 0; di < 3; ++di) {
        const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - 1;
        if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dj = 0; dj < 3; ++dj) {
          const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - 1;
          if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* xr = xv.data() + (si * w + sj) * cin;
          const double* kr = kv.data() + (di * 3 + dj) * cin * cout;
          for (std::size_t c = 0; c < cin; ++c) {
            const double xc = xr[c];
            const double* kc = kr + c * cout;
            for (std::size_t o = 0; o < cout; ++o) yr[o] += xc * kc[o];
          }
        }
      }
    }
  }
  return detail::make_result(
      Shape{h, w, cout}, std::move(y), {x, kernel, bias},
      [h, w, cin, cout](detail::Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        auto* px = detail::grad_target(self, 0);
        auto* pk = detail::grad_target(self, 1);
        auto* pb = detail::grad_target(self, 2);
        std::vector<double> gx(px ? h * w * cin : 0, 0.0);
        std::vector<double> gk(pk ? 9 * cin * cout : 0, 0.0);
        std::vector<double> gb(pb ? cout : 0, 0.0);
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double* g = self.grad.data() + (i * w + j) * cout;
            if (pb) {
              for (std::size_t o = 0; o < cout; ++o) gb[o] += g[o];
            }
            for (std::size_t di = 0; di < 3; ++di) {
              const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - 1;
              if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t dj = 0; dj < 3; ++dj) {
                const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xo = (si * w + sj) * cin;
                const std::size_t ko = (di * 3 + dj) * cin * cout;
                for (std::size_t c = 0; c < cin; ++c) {
                  const double* kc = kv.data() + ko + c * cout;
                  if (px) {
                    double s = 0.0;
                    for (std::size_t o = 0; o < cout; ++o) s += g[o] * kc[o];
                    gx[xo + c] += s;
                  }
                  if (pk) {
                    const double xc = xv[xo + c];
                    double* gkc = gk.data() + ko + c * cout;
                    for (std::size_t o = 0; o < cout; ++o) gkc[o] += xc * g[o];
                  }
                }
              }
            }
          }
        }
        detail::accumulate(px, gx);
        detail::accumulate(pk, gk);
        detail::accumulate(pb, gb);
      });
}

}  // namespace saot
