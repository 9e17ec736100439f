#pragma once

#include <algorithm>
#include <chrono>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "saot/checkpoint.hpp"

namespace saot {

struct TrainResult {
  Checkpoint best;  // lowest test error (train error when there is no test set)
  Checkpoint last;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double initial_train_rel_l2 = 0.0;  // full evaluation before the first update
  double final_train_rel_l2 = 0.0;    // full evaluation after the last update
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested != 0) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

namespace detail {

inline void check_samples(const Model& m, const std::vector<GridSample>& set, const char* which) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set[i];
    m.check_input(s.a);
    if (s.u.rank() != 3 || s.u.dim(0) != s.a.dim(0) || s.u.dim(1) != s.a.dim(1) ||
        s.u.dim(2) != m.config().out_channels) {
      throw DimensionError(std::string(which) + " sample " + std::to_string(i) + ": target " +
                           shape_string(s.u.shape()) + " does not fit input " +
                           shape_string(s.a.shape()));
    }
    for (const Tensor* t : {&s.a, &s.u}) {
      for (double v : t->values()) {
        if (!std::isfinite(v)) {
          throw ValidationError(std::string(which) + " sample " + std::to_string(i) +
                                " contains a non-finite value");
        }
      }
    }
  }
}

// Runs job(worker, item) for every item, item i on worker i % workers.
// Results land in per-item slots, so reductions over them are independent
// of the thread count.
template <class Job>
void parallel_items(std::size_t items, std::size_t workers, Job&& job) {
  if (workers <= 1 || items <= 1) {
    for (std::size_t i = 0; i < items; ++i) job(0, i);
    return;
  }
  workers = std::min(workers, items);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < items; i += workers) job(w, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double evaluate_with(std::vector<Model>& workers, const std::vector<GridSample>& set) {
  if (set.empty()) return 0.0;
  std::vector<double> errs(set.size());
  parallel_items(set.size(), workers.size(), [&](std::size_t w, std::size_t i) {
    NoGradGuard no_grad;
    errs[i] = relative_l2(workers[w].forward(set[i].a), set[i].u).item();
  });
  return std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
}

}  // namespace detail

/// Minimizes the mean per-sample relative L2 error with AdamW over shuffled
/// minibatches. History row 0 holds the evaluation before training; row e
/// holds the mean minibatch loss of epoch e and the test error after it.
inline TrainResult train(const std::vector<GridSample>& train_set,
                         const std::vector<GridSample>& test_set, const ModelConfig& mc,
                         const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (train_set.empty()) throw ConfigurationError("train: empty training set");
  Model model(mc);
  detail::check_samples(model, train_set, "train");
  detail::check_samples(model, test_set, "test");
  if (tc.normalize) model.set_normalizer(Normalizer::fit(train_set));

  const std::size_t n_threads = resolve_threads(tc.threads);
  std::vector<Model> workers;
  for (std::size_t w = 0; w < n_threads; ++w) workers.push_back(model.clone());
  auto sync_workers = [&] {
    for (auto& w : workers) w.parameters().copy_values_from(model.parameters());
  };

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  TrainResult result;
  double best_score = std::numeric_limits<double>::infinity();
  auto record = [&](const EpochMetrics& row) {
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);
    const double score = test_set.empty() ? row.train_rel_l2 : row.test_rel_l2;
    if (score < best_score) {
      best_score = score;
      result.best_epoch = row.epoch;
      result.best = make_checkpoint(model, tc);
    }
  };

  result.initial_train_rel_l2 = detail::evaluate_with(workers, train_set);
  record({0, result.initial_train_rel_l2, detail::evaluate_with(workers, test_set), elapsed()});

  AdamW opt(tc);
  opt.init(model.parameters());
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * batches;
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ParameterStore& params = model.parameters();
  std::vector<std::vector<double>> sample_grads;
  std::vector<double> sample_loss;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t step = opt.state().step;
      const std::size_t begin = b * tc.batch_size, end = std::min(n, begin + tc.batch_size);
      const std::size_t count = end - begin;
      sync_workers();
      sample_grads.assign(count, {});
      sample_loss.assign(count, 0.0);
      detail::parallel_items(count, workers.size(), [&](std::size_t w, std::size_t i) {
        Model& m = workers[w];
        const GridSample& s = train_set[order[begin + i]];
        m.parameters().zero_grad();
        try {
          Tensor loss = relative_l2(m.forward(s.a), s.u);
          sample_loss[i] = loss.item();
          if (!std::isfinite(sample_loss[i])) return;
          loss.backward();
        } catch (const NumericError&) {
          // Non-finite values caught inside a layer count as a diverged loss.
          sample_loss[i] = std::numeric_limits<double>::quiet_NaN();
          return;
        }
        auto& g = sample_grads[i];
        for (const auto& [_, t] : m.parameters()) g.insert(g.end(), t.grad().begin(), t.grad().end());
      });

      // Reduce in sample order: identical sums for any thread count.
      params.zero_grad();
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(sample_loss[i])) {
          throw DivergenceError("non-finite training loss at step " + std::to_string(step) +
                                    " (epoch " + std::to_string(epoch) + ")",
                                step);
        }
        loss_sum += sample_loss[i];
        std::size_t off = 0;
        for (auto& [_, t] : params) {
          auto g = t.grad();
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += sample_grads[i][off + k];
          off += g.size();
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [_, t] : params)
        for (double& g : t.grad()) g *= inv;
      const double norm = clip_grad_norm(params, tc.clip_norm);
      if (!std::isfinite(norm)) {
        throw DivergenceError("non-finite gradient norm at step " + std::to_string(step), step);
      }
      opt.step(params, scheduled_lr(tc, step, total_steps));
    }
    sync_workers();
    record({epoch, loss_sum / static_cast<double>(n), detail::evaluate_with(workers, test_set),
            elapsed()});
  }

  sync_workers();
  result.final_train_rel_l2 = detail::evaluate_with(workers, train_set);
  result.last = make_checkpoint(model, tc);
  result.last.optimizer = opt.state();
  const std::string res = std::to_string(train_set.front().height()) + "x" +
                          std::to_string(train_set.front().width());
  for (Checkpoint* c : {&result.best, &result.last}) {
    c->history = result.history;
    c->metadata["train_resolution"] = res;
    c->metadata["best_epoch"] = std::to_string(result.best_epoch);
  }
  result.best.optimizer = opt.state();
  return result;
}

}  // namespace saot
