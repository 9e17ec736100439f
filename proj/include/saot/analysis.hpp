#pragma once

// Post-hoc analysis: radial energy spectra, resolution sweeps and mixer
// timing.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "saot/attention.hpp"
#include "saot/spectral.hpp"

namespace saot {

// ---------------------------------------------------------- energy spectrum

/// Shell sums of |fft2(x)|^2 with the unnormalized forward transform, so
/// sum_k E(k) = H·W·sum x^2.
inline constexpr const char* kSpectrumConvention =
    "E(k) = sum of |fft2(x)|^2 over modes with round(|k'|) = k, centered k' in (-n/2, n/2], "
    "unnormalized forward FFT: sum_k E(k) = H*W*sum(x^2)";

inline int centered_frequency(std::size_t index, std::size_t n) {
  const auto i = static_cast<long>(index), m = static_cast<long>(n);
  return static_cast<int>(i <= m / 2 ? i : i - m);
}

inline std::size_t shell_of(std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  const double k1 = centered_frequency(i, h), k2 = centered_frequency(j, w);
  return static_cast<std::size_t>(std::lround(std::sqrt(k1 * k1 + k2 * k2)));
}

inline std::size_t max_shell(std::size_t h, std::size_t w) { return shell_of(h / 2, w / 2, h, w); }

inline std::vector<double> energy_spectrum(const Tensor& field) {
  if (field.rank() != 3 || field.dim(2) != 1) {
    throw DimensionError("energy_spectrum: expected a single-channel H x W x 1 field, got " +
                         shape_string(field.shape()));
  }
  NoGradGuard no_grad;
  const std::size_t h = field.dim(0), w = field.dim(1);
  const SpectralField s = fft2(field, FftNorm::backward);
  std::vector<double> e(max_shell(h, w) + 1, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double re = s.re[i * w + j], im = s.im[i * w + j];
      e[shell_of(i, j, h, w)] += re * re + im * im;
    }
  return e;
}

struct SpectrumReport {
  std::size_t height = 0, width = 0;
  std::vector<std::string> labels;          // e.g. gt, pred or gt, fa, wa
  std::vector<std::vector<double>> series;  // one E(k) per label
  std::vector<double> field_energy;         // H·W·sum x^2 per label

  void add(const std::string& label, const Tensor& field) {
    if (labels.empty()) {
      height = field.dim(0);
      width = field.dim(1);
    } else if (field.rank() < 2 || field.dim(0) != height || field.dim(1) != width) {
      throw DimensionError("spectrum report: field " + shape_string(field.shape()) +
                           " does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    labels.push_back(label);
    series.push_back(energy_spectrum(field));
    double sq = 0.0;
    for (double v : field.values()) sq += v * v;
    field_energy.push_back(static_cast<double>(height * width) * sq);
  }

  /// Largest |sum_k E(k) - H·W·sum x^2| / max(H·W·sum x^2, tiny) over series.
  double parseval_error() const {
    double worst = 0.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
      double total = 0.0;
      for (double v : series[s]) total += v;
      worst = std::max(worst, std::abs(total - field_energy[s]) / std::max(field_energy[s], 1e-300));
    }
    return worst;
  }

  std::string csv() const {
    std::string out = "# " + std::string(kSpectrumConvention) + "\nk";
    for (const auto& l : labels) out += ",E_" + l;
    out += "\n";
    const std::size_t shells = series.empty() ? 0 : series.front().size();
    char buf[40];
    for (std::size_t k = 0; k < shells; ++k) {
      out += std::to_string(k);
      for (const auto& s : series) {
        std::snprintf(buf, sizeof buf, ",%.17g", s[k]);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }
};

/// Ratio of prediction to reference energy summed over shells k >= from.
/// 1 means the high band carries the reference energy.
inline double high_shell_energy_ratio(const std::vector<double>& reference,
                                      const std::vector<double>& prediction, std::size_t from) {
  double r = 0.0, p = 0.0;
  for (std::size_t k = from; k < reference.size() && k < prediction.size(); ++k) {
    r += reference[k];
    p += prediction[k];
  }
  return r > 0.0 ? p / r : 0.0;
}

/// Mean |log10(E_pred / E_ref)| over shells k >= from where both are positive.
inline double high_shell_log_gap(const std::vector<double>& reference,
                                 const std::vector<double>& prediction, std::size_t from) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = from; k < reference.size() && k < prediction.size(); ++k) {
    if (reference[k] > 0.0 && prediction[k] > 0.0) {
      sum += std::abs(std::log10(prediction[k] / reference[k]));
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// ------------------------------------------------------------ resolution sweep

struct SweepRow {
  std::size_t resolution = 0;
  double mean_rel_l2 = 0.0;
};

struct SweepReport {
  std::size_t train_resolution = 0;
  std::vector<SweepRow> rows;  // strictly increasing resolution

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!std::isfinite(rows[i].mean_rel_l2)) {
        throw NumericError("sweep: non-finite error at resolution " +
                           std::to_string(rows[i].resolution));
      }
      if (i > 0 && rows[i].resolution <= rows[i - 1].resolution) {
        throw ValidationError("sweep: resolutions must be strictly increasing");
      }
    }
  }

  /// Resolution with the lowest error.
  std::size_t best_resolution() const {
    if (rows.empty()) throw ValidationError("sweep: no rows");
    return std::min_element(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
             return a.mean_rel_l2 < b.mean_rel_l2;
           })->resolution;
  }

  std::string csv() const {
    std::string out = "resolution,mean_rel_l2,is_train_resolution\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", r.resolution, r.mean_rel_l2,
                    r.resolution == train_resolution ? 1 : 0);
      out += buf;
    }
    return out;
  }
};

// ----------------------------------------------------------------- timing

struct BenchRow {
  std::string mixer;  // linear_attention or fourier_attention
  std::size_t n = 0;  // tokens
  double seconds = 0.0;  // median over repeats
};

/// Most square h x w grid with h·w = n and h <= w.
inline std::pair<std::size_t, std::size_t> grid_for_tokens(std::size_t n) {
  if (n == 0) throw ValidationError("bench: token count must be positive");
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (h > 1 && n % h) --h;
  return {h, n / h};
}

template <class F>
double median_seconds(F&& f, std::size_t repeats) {
  std::vector<double> runs;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    runs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(runs.begin(), runs.end());
  return runs[runs.size() / 2];
}

/// Per-call linear_attention seconds at each n, median of `runs` runs. Runs
/// are interleaved across sizes so drift in machine speed hits every n alike,
/// and each run repeats the call so all sizes do the work of the largest.
inline std::vector<double> linear_attention_scaling(const std::vector<std::size_t>& ns,
                                                    std::size_t d, std::size_t runs = 5,
                                                    std::uint64_t seed = 0) {
  if (ns.empty() || d == 0) throw ValidationError("scaling: need token counts and a positive width");
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const std::size_t largest = *std::max_element(ns.begin(), ns.end());
  std::vector<std::array<Tensor, 3>> inputs;
  for (std::size_t n : ns) {
    if (n == 0) throw ValidationError("scaling: token count must be positive");
    std::array<Tensor, 3> qkv{Tensor(Shape{n, d}), Tensor(Shape{n, d}), Tensor(Shape{n, d})};
    for (auto& t : qkv)
      for (double& v : t.values()) v = uni(rng);
    linear_attention(qkv[0], qkv[1], qkv[2]);  // warm caches and the allocator
    inputs.push_back(std::move(qkv));
  }
  std::vector<std::vector<double>> times(ns.size());
  for (std::size_t r = 0; r < std::max<std::size_t>(runs, 1); ++r) {
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const std::size_t reps = std::max<std::size_t>(largest / ns[i], 1);
      const auto& [q, k, v] = inputs[i];
      times[i].push_back(median_seconds(
                             [&] {
                               for (std::size_t c = 0; c < reps; ++c) linear_attention(q, k, v);
                             },
                             1) /
                         static_cast<double>(reps));
    }
  }
  std::vector<double> medians;
  for (auto& t : times) {
    std::sort(t.begin(), t.end());
    medians.push_back(t[t.size() / 2]);
  }
  return medians;
}

/// Forward-only timing of both token mixers on random inputs of width d.
inline std::vector<BenchRow> bench_mixers(const std::vector<std::size_t>& ns, std::size_t d,
                                          std::size_t repeats = 5, std::uint64_t seed = 0) {
  if (d == 0) throw ValidationError("bench: width must be positive");
  NoGradGuard no_grad;
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto random = [&](Shape s) {
    Tensor t(std::move(s));
    for (double& v : t.values()) v = uni(rng);
    return t;
  };
  ParameterStore store(seed);
  const std::size_t blocks = d % 4 == 0 ? 4 : 1;
  const auto fa = FourierAttentionParams::create(store, "fa", d, blocks, 1);
  for (std::size_t n : ns) {
    const Tensor q = random({n, d}), k = random({n, d}), v = random({n, d});
    rows.push_back({"linear_attention", n, median_seconds([&] { linear_attention(q, k, v); }, repeats)});
    const auto [h, w] = grid_for_tokens(n);
    const Tensor x = random({h, w, d});
    rows.push_back({"fourier_attention", n, median_seconds([&] { fourier_attention(x, fa); }, repeats)});
  }
  return rows;
}

}  // namespace saot
