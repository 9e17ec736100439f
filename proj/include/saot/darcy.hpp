#pragma once

// Synthetic Darcy flow: -div(a grad u) = 1 on the unit square, u = 0 on the
// boundary. Fields live on endpoint-aligned node grids, node (i, j) at
// (i / (H-1), j / (W-1)), so the boundary ring holds the Dirichlet values.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "saot/kv_config.hpp"
#include "saot/model.hpp"

namespace saot {

struct CoefficientConfig {
  double smoothness = 2.0;  // alpha in the (pi^2 |k|^2 + tau^2)^(-alpha/2) mode decay
  double length_scale_inv = 3.0;  // tau
  std::size_t modes = 16;         // cosine modes per axis
  double lo = 3.0;
  double hi = 12.0;
  double threshold = 0.0;  // -inf gives the constant field hi

  void validate() const {
    if (!(lo > 0.0) || !(hi > 0.0) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw ValidationError("coefficient levels must be positive and finite (lo = " +
                            std::to_string(lo) + ", hi = " + std::to_string(hi) + ")");
    }
    if (modes < 1) throw ValidationError("coefficient field needs at least one mode");
    if (!(smoothness > 0.0) || !(length_scale_inv >= 0.0)) {
      throw ValidationError("coefficient smoothness must be > 0 and tau >= 0");
    }
  }
};

namespace detail {

inline void require_grid(std::size_t h, std::size_t w, std::size_t min, const char* op) {
  if (h < min || w < min) {
    throw ValidationError(std::string(op) + ": grid " + std::to_string(h) + "x" +
                          std::to_string(w) + " is below " + std::to_string(min) + " per side");
  }
}

// cos(pi k t) for t on an n-node endpoint-aligned grid, k < modes; [k * n + i].
inline std::vector<double> cosine_table(std::size_t n, std::size_t modes) {
  std::vector<double> t(modes * n);
  for (std::size_t k = 0; k < modes; ++k)
    for (std::size_t i = 0; i < n; ++i)
      t[k * n + i] = std::cos(std::numbers::pi * static_cast<double>(k) * static_cast<double>(i) /
                              static_cast<double>(n - 1));
  return t;
}

}  // namespace detail

/// Mean-zero Gaussian random field sum_k xi_k lambda_k cos(pi k1 x) cos(pi k2 y)
/// (k != 0) evaluated on the H x W grid. The coefficients depend only on the
/// seed, so one seed gives the same continuous field at every resolution.
inline Tensor gaussian_random_field(std::uint64_t seed, std::size_t h, std::size_t w,
                                    const CoefficientConfig& c) {
  c.validate();
  detail::require_grid(h, w, 2, "gaussian_random_field");
  const std::size_t m = c.modes;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> coef(m * m, 0.0);
  const double pi2 = std::numbers::pi * std::numbers::pi, tau2 = c.length_scale_inv * c.length_scale_inv;
  for (std::size_t k1 = 0; k1 < m; ++k1)
    for (std::size_t k2 = 0; k2 < m; ++k2) {
      const double xi = normal(rng);
      if (k1 == 0 && k2 == 0) continue;
      const double k_sq = static_cast<double>(k1 * k1 + k2 * k2);
      coef[k1 * m + k2] = xi * std::pow(pi2 * k_sq + tau2, -c.smoothness / 2.0);
    }
  const auto cx = detail::cosine_table(h, m), cy = detail::cosine_table(w, m);
  // Separable sum: first over k2 per (k1, j), then over k1 per (i, j).
  std::vector<double> partial(m * w, 0.0);
  for (std::size_t k1 = 0; k1 < m; ++k1)
    for (std::size_t k2 = 0; k2 < m; ++k2) {
      const double cf = coef[k1 * m + k2];
      if (cf == 0.0) continue;
      for (std::size_t j = 0; j < w; ++j) partial[k1 * w + j] += cf * cy[k2 * w + j];
    }
  Tensor field(Shape{h, w, 1});
  auto f = field.values();
  for (std::size_t k1 = 0; k1 < m; ++k1)
    for (std::size_t i = 0; i < h; ++i) {
      const double ck = cx[k1 * h + i];
      for (std::size_t j = 0; j < w; ++j) f[i * w + j] += ck * partial[k1 * w + j];
    }
  return field;
}

/// Two-level coefficient: hi where the random field is >= threshold, lo elsewhere.
inline Tensor sample_coefficient(std::uint64_t seed, std::size_t h, std::size_t w,
                                 const CoefficientConfig& c = {}) {
  c.validate();
  if (h % 2 || w % 2) {
    throw ValidationError("sample_coefficient: grid " + std::to_string(h) + "x" +
                          std::to_string(w) + " must have even sides");
  }
  detail::require_grid(h, w, 2, "sample_coefficient");
  Tensor a(Shape{h, w, 1});
  if (c.threshold == -INFINITY) {
    std::fill(a.values().begin(), a.values().end(), c.hi);
    return a;
  }
  const Tensor g = gaussian_random_field(seed, h, w, c);
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] = g[i] >= c.threshold ? c.hi : c.lo;
  return a;
}

// ------------------------------------------------------------------ solver

/// 5-point conservative operator on interior nodes: face coefficients are
/// harmonic means of the two node values, (A u)_p = sum_f a_f (u_p - u_q) / h_f^2
/// with u = 0 on the boundary ring.
class DarcyOperator {
 public:
  explicit DarcyOperator(const Tensor& a) : h_(a.dim(0)), w_(a.dim(1)) {
    if (a.rank() != 3 || a.dim(2) != 1) {
      throw DimensionError("darcy: coefficient must be H x W x 1, got " + shape_string(a.shape()));
    }
    detail::require_grid(h_, w_, 3, "darcy");
    for (double v : a.values()) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("darcy: coefficient must be positive");
    }
    const double ix2 = static_cast<double>((h_ - 1) * (h_ - 1));
    const double iy2 = static_cast<double>((w_ - 1) * (w_ - 1));
    auto harm = [&](std::size_t p, std::size_t q) { return 2.0 * a[p] * a[q] / (a[p] + a[q]); };
    // down_[p]: face between node p and p + W; right_[p]: between p and p + 1.
    down_.assign(h_ * w_, 0.0);
    right_.assign(h_ * w_, 0.0);
    for (std::size_t i = 0; i + 1 < h_; ++i)
      for (std::size_t j = 0; j < w_; ++j) down_[i * w_ + j] = harm(i * w_ + j, (i + 1) * w_ + j) * ix2;
    for (std::size_t i = 0; i < h_; ++i)
      for (std::size_t j = 0; j + 1 < w_; ++j) right_[i * w_ + j] = harm(i * w_ + j, i * w_ + j + 1) * iy2;
    diag_.assign(h_ * w_, 0.0);
    for (std::size_t i = 1; i + 1 < h_; ++i)
      for (std::size_t j = 1; j + 1 < w_; ++j) {
        const std::size_t p = i * w_ + j;
        diag_[p] = down_[p] + down_[p - w_] + right_[p] + right_[p - 1];
      }
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  bool interior(std::size_t i, std::size_t j) const {
    return i > 0 && j > 0 && i + 1 < h_ && j + 1 < w_;
  }
  double diagonal(std::size_t p) const { return diag_[p]; }

  /// y = A x on interior nodes; boundary entries of y are zero and boundary
  /// entries of x are ignored.
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(h_ * w_, 0.0);
    auto at = [&](std::size_t i, std::size_t j) { return interior(i, j) ? x[i * w_ + j] : 0.0; };
    for (std::size_t i = 1; i + 1 < h_; ++i)
      for (std::size_t j = 1; j + 1 < w_; ++j) {
        const std::size_t p = i * w_ + j;
        y[p] = diag_[p] * x[p] - down_[p] * at(i + 1, j) - down_[p - w_] * at(i - 1, j) -
               right_[p] * at(i, j + 1) - right_[p - 1] * at(i, j - 1);
      }
  }

 private:
  std::size_t h_, w_;
  std::vector<double> down_, right_, diag_;
};

struct DarcySolution {
  Tensor u;  // H x W x 1, zero on the boundary ring
  double relative_residual = 0.0;
  std::size_t iterations = 0;
};

/// ||f - A u|| / ||f|| over interior nodes for forcing f = 1.
inline double darcy_residual(const Tensor& a, const Tensor& u) {
  const DarcyOperator op(a);
  std::vector<double> x(u.values().begin(), u.values().end()), y;
  op.apply(x, y);
  double r2 = 0.0, f2 = 0.0;
  for (std::size_t i = 1; i + 1 < op.height(); ++i)
    for (std::size_t j = 1; j + 1 < op.width(); ++j) {
      const double r = 1.0 - y[i * op.width() + j];
      r2 += r * r;
      f2 += 1.0;
    }
  return std::sqrt(r2 / f2);
}

/// Jacobi-preconditioned conjugate gradients on the SPD system A u = 1.
inline DarcySolution solve_darcy(const Tensor& a, double tolerance = 1e-10,
                                 std::size_t max_iterations = 0) {
  const DarcyOperator op(a);
  const std::size_t h = op.height(), w = op.width(), n = h * w;
  if (max_iterations == 0) max_iterations = 10 * h * w;
  std::vector<double> x(n, 0.0), r(n, 0.0), z(n, 0.0), p(n, 0.0), q;
  double f_norm = 0.0;
  for (std::size_t i = 1; i + 1 < h; ++i)
    for (std::size_t j = 1; j + 1 < w; ++j) {
      r[i * w + j] = 1.0;
      f_norm += 1.0;
    }
  f_norm = std::sqrt(f_norm);
  auto precondition = [&] {
    for (std::size_t k = 0; k < n; ++k) z[k] = op.diagonal(k) > 0.0 ? r[k] / op.diagonal(k) : 0.0;
  };
  auto dot = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += u[k] * v[k];
    return s;
  };

  precondition();
  p = z;
  double rz = dot(r, z);
  double res = std::sqrt(dot(r, r)) / f_norm;
  std::size_t it = 0;
  while (res >= tolerance && it < max_iterations) {
    op.apply(p, q);
    const double alpha = rz / dot(p, q);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * q[k];
    }
    ++it;
    // Recompute the true residual now and then so drift cannot fake convergence.
    if (it % 50 == 0) {
      op.apply(x, q);
      for (std::size_t k = 0; k < n; ++k) r[k] = op.diagonal(k) > 0.0 ? 1.0 - q[k] : 0.0;
    }
    res = std::sqrt(dot(r, r)) / f_norm;
    precondition();
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
  }

  DarcySolution s{Tensor(Shape{h, w, 1}), 0.0, it};
  std::copy(x.begin(), x.end(), s.u.values().begin());
  s.relative_residual = darcy_residual(a, s.u);
  if (!(s.relative_residual < tolerance)) {
    throw ConvergenceError("darcy solver: relative residual " + std::to_string(s.relative_residual) +
                               " after " + std::to_string(it) + " iterations (tolerance " +
                               std::to_string(tolerance) + ")",
                           s.relative_residual);
  }
  return s;
}

// -------------------------------------------------------------- resampling

/// Bilinear interpolation between endpoint-aligned grids on the unit square.
inline Tensor resample(const Tensor& field, std::size_t h2, std::size_t w2) {
  if (field.rank() != 3) {
    throw DimensionError("resample: expected H x W x C, got " + shape_string(field.shape()));
  }
  detail::require_grid(h2, w2, 2, "resample");
  const std::size_t h = field.dim(0), w = field.dim(1), c = field.dim(2);
  detail::require_grid(h, w, 2, "resample source");
  Tensor out(Shape{h2, w2, c});
  auto locate = [](std::size_t i2, std::size_t n2, std::size_t n, std::size_t& lo, double& t) {
    // Integer arithmetic first, so grid-aligned targets land exactly on nodes.
    const std::size_t num = i2 * (n - 1), den = n2 - 1;
    lo = std::min(num / den, n - 2);
    t = static_cast<double>(num - lo * den) / static_cast<double>(den);
  };
  for (std::size_t i2 = 0; i2 < h2; ++i2) {
    std::size_t i0;
    double ti;
    locate(i2, h2, h, i0, ti);
    for (std::size_t j2 = 0; j2 < w2; ++j2) {
      std::size_t j0;
      double tj;
      locate(j2, w2, w, j0, tj);
      for (std::size_t k = 0; k < c; ++k) {
        auto v = [&](std::size_t i, std::size_t j) { return field[(i * w + j) * c + k]; };
        const double top = tj == 0.0 ? v(i0, j0) : (1.0 - tj) * v(i0, j0) + tj * v(i0, j0 + 1);
        const double bot =
            tj == 0.0 ? v(i0 + 1, j0) : (1.0 - tj) * v(i0 + 1, j0) + tj * v(i0 + 1, j0 + 1);
        out.values()[(i2 * w2 + j2) * c + k] = ti == 0.0 ? top : (1.0 - ti) * top + ti * bot;
      }
    }
  }
  return out;
}

// -------------------------------------------------------------- generation

struct DarcyConfig {
  std::size_t n_train = 64;
  std::size_t n_test = 16;
  std::size_t resolution = 32;            // training grid side
  std::size_t reference_resolution = 128; // solve grid side; solutions are resampled down
  std::uint64_t seed = 0;
  CoefficientConfig coefficient;

  void validate() const {
    coefficient.validate();
    for (std::size_t r : {resolution, reference_resolution}) {
      if (r < 4 || r % 2) {
        throw ValidationError("darcy: resolution " + std::to_string(r) + " must be even and >= 4");
      }
    }
  }
};

inline void write_darcy_config(KvConfig& kv, const DarcyConfig& c) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv.set("n_train", std::to_string(c.n_train));
  kv.set("n_test", std::to_string(c.n_test));
  kv.set("resolution", std::to_string(c.resolution));
  kv.set("reference_resolution", std::to_string(c.reference_resolution));
  kv.set("data_seed", std::to_string(c.seed));
  kv.set("smoothness", num(c.coefficient.smoothness));
  kv.set("tau", num(c.coefficient.length_scale_inv));
  kv.set("modes", std::to_string(c.coefficient.modes));
  kv.set("lo", num(c.coefficient.lo));
  kv.set("hi", num(c.coefficient.hi));
  kv.set("threshold", c.coefficient.threshold == -INFINITY ? "-inf" : num(c.coefficient.threshold));
}

inline DarcyConfig read_darcy_config(const KvConfig& kv, DarcyConfig c = {}) {
  c.n_train = kv.get_uint("n_train", c.n_train);
  c.n_test = kv.get_uint("n_test", c.n_test);
  c.resolution = kv.get_uint("resolution", c.resolution);
  c.reference_resolution = kv.get_uint("reference_resolution", c.reference_resolution);
  c.seed = kv.get_uint("data_seed", c.seed);
  c.coefficient.smoothness = kv.get_double("smoothness", c.coefficient.smoothness);
  c.coefficient.length_scale_inv = kv.get_double("tau", c.coefficient.length_scale_inv);
  c.coefficient.modes = kv.get_uint("modes", c.coefficient.modes);
  c.coefficient.lo = kv.get_double("lo", c.coefficient.lo);
  c.coefficient.hi = kv.get_double("hi", c.coefficient.hi);
  c.coefficient.threshold = kv.get_double("threshold", c.coefficient.threshold);
  return c;
}

/// Seed of sample `index` in a dataset; train and test draw disjoint streams.
inline std::uint64_t darcy_sample_seed(std::uint64_t base, bool test, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(test ? 1 : 0), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// One sample per requested resolution, all from the same seed. Each
/// coefficient is the thresholded random field evaluated on its own grid (so
/// it stays two-level); the pressure is solved once on the reference grid and
/// resampled.
inline std::vector<GridSample> darcy_samples(std::uint64_t seed,
                                             const std::vector<std::size_t>& resolutions,
                                             std::size_t reference_resolution,
                                             const CoefficientConfig& c, double* residual = nullptr) {
  const Tensor a_ref = sample_coefficient(seed, reference_resolution, reference_resolution, c);
  const DarcySolution sol = solve_darcy(a_ref);
  if (residual) *residual = sol.relative_residual;
  std::vector<GridSample> out;
  for (std::size_t r : resolutions) {
    if (r == reference_resolution) {
      out.push_back({a_ref.clone(), sol.u.clone()});
    } else {
      out.push_back({sample_coefficient(seed, r, r, c), resample(sol.u, r, r)});
    }
  }
  return out;
}

inline GridSample darcy_sample(std::uint64_t seed, std::size_t resolution,
                               std::size_t reference_resolution, const CoefficientConfig& c,
                               double* residual = nullptr) {
  return darcy_samples(seed, {resolution}, reference_resolution, c, residual).front();
}

}  // namespace saot
