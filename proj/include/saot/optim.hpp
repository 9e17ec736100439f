#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "saot/tensor.hpp"

namespace saot {

enum class LrSchedule { cosine, constant };

inline std::string schedule_name(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "constant";
}

inline LrSchedule parse_schedule(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "constant") return LrSchedule::constant;
  throw ConfigurationError("unknown learning-rate schedule '" + s +
                           "' (expected cosine or constant)");
}

struct TrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  LrSchedule schedule = LrSchedule::cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // 0 = hardware concurrency
  bool normalize = true;     // fit per-channel input/output standardization on the training set

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigurationError("train config: " + m); };
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      fail("betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  }
};

/// Learning rate for 0-based `step` of `total` steps.
inline double scheduled_lr(const TrainConfig& c, std::size_t step, std::size_t total) {
  if (c.schedule == LrSchedule::constant || total == 0) return c.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * c.learning_rate * (1.0 + std::cos(std::numbers::pi * t));
}

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // one buffer per parameter, store order
  std::vector<std::vector<double>> v;
};

/// Adam with decoupled weight decay: θ ← θ - lr·(m̂/(√v̂ + ε) + λθ).
/// Gradients come from the parameters' grad buffers.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& c) : c_(c) {}

  void init(const ParameterStore& params) {
    state_ = {};
    for (const auto& [_, t] : params) {
      state_.m.emplace_back(t.size(), 0.0);
      state_.v.emplace_back(t.size(), 0.0);
    }
  }

  void step(ParameterStore& params, double lr) {
    if (state_.m.size() != params.size()) init(params);
    ++state_.step;
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(state_.step));
    std::size_t idx = 0;
    for (auto& [_, t] : params) {
      auto theta = t.values();
      auto g = t.grad();
      auto& m = state_.m[idx];
      auto& v = state_.v[idx];
      ++idx;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = c_.beta1 * m[i] + (1.0 - c_.beta1) * g[i];
        v[i] = c_.beta2 * v[i] + (1.0 - c_.beta2) * g[i] * g[i];
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c_.adam_eps);
        theta[i] -= lr * (update + c_.weight_decay * theta[i]);
      }
    }
  }

  OptimizerState& state() { return state_; }
  const OptimizerState& state() const { return state_; }

 private:
  TrainConfig c_;
  OptimizerState state_;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, t] : params)
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, t] : params)
      for (double& g : t.grad()) g *= s;
  }
  return norm;
}

}  // namespace saot
