#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "saot/tensor.hpp"

namespace saot {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

using ScalarFunction = std::function<Tensor(ParameterStore&)>;

enum class GradCheckMethod {
  central,       // one central difference at step h
  extrapolated,  // central differences at h, h/1.4, h/1.4², ... extrapolated to zero step
};

namespace detail {

// Neville extrapolation of central differences toward h = 0 (Ridders). Keeps
// the entry with the smallest error estimate, so kinks and roundoff at the
// small-step end of the ladder are not extrapolated through.
template <class Diff>
double extrapolated_difference(Diff&& diff, double h) {
  constexpr int n = 10;
  constexpr double shrink = 1.4, shrink2 = shrink * shrink, safe = 2.0;
  double a[n][n];
  double best = 0.0, best_err = std::numeric_limits<double>::infinity();
  a[0][0] = diff(h);
  for (int i = 1; i < n; ++i) {
    h /= shrink;
    a[0][i] = diff(h);
    double fac = shrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= shrink2;
      const double err = std::max(std::abs(a[j][i] - a[j - 1][i]),
                                  std::abs(a[j][i] - a[j - 1][i - 1]));
      if (err <= best_err) {
        best_err = err;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= safe * best_err) break;
  }
  return best;
}

}  // namespace detail

/// Compares backward-pass gradients against central differences
/// (f(θ+h·e) - f(θ-h·e)) / 2h for every entry of every parameter.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// `extrapolated` starts its step ladder at h.
inline GradCheckReport grad_check(const ScalarFunction& fn, ParameterStore& params,
                                  double h = 1e-5,
                                  GradCheckMethod method = GradCheckMethod::central) {
  constexpr double floor = 1e-8;
  auto eval = [&] { return fn(params).item(); };

  const double first = eval();
  const double second = eval();
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw DeterminismError("grad_check: function returned " + std::to_string(first) + " then " +
                           std::to_string(second) + " at the same parameters");
  }

  params.zero_grad();
  fn(params).backward();

  GradCheckReport report;
  for (auto& [name, tensor] : params) {
    GradCheckEntry entry{name};
    std::vector<double> analytic(tensor.grad().begin(), tensor.grad().end());
    auto values = tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto diff = [&](double step) {
        values[i] = saved + step;
        const double up = eval();
        values[i] = saved - step;
        const double down = eval();
        values[i] = saved;
        return (up - down) / (2.0 * step);
      };
      const double numeric = method == GradCheckMethod::central
                                 ? diff(h)
                                 : detail::extrapolated_difference(diff, h);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace saot
