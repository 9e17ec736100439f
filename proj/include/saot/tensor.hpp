#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "saot/error.hpp"

namespace saot {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

// One vertex of the reverse-mode graph. Outputs hold their parents; parents
// never point back, so dropping the final output releases the whole graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized to value.size()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major array of doubles with an attached gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// vertex. Use clone() for an independent leaf copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != numel(shape)) {
      throw DimensionError("tensor of shape " + shape_string(shape) + " needs " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Independent leaf with the same values; never shares graph or storage.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  /// Reverse sweep from a single-element output. Leaf gradients accumulate;
  /// interior gradients are reset at the start of every sweep.
  void backward(double seed = 1.0) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward(double seed) const {
  if (size() != 1) {
    throw DimensionError("backward() needs a single-element output, got " +
                         shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

/// Graph recording switch for the current thread. Inference paths turn it
/// off so that no backward closures or parent links are kept.
inline thread_local bool grad_mode_enabled = true;

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op output. The backward closure is attached only when at least
// one input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  bool needs = grad_mode_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (needs) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (auto& t : inputs) n.parents.push_back(t.defined() ? t.node() : nullptr);
    n.backward = std::move(backward);
  }
  return out;
}

// Parent i if it is present and wants a gradient, else nullptr.
inline Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (!p || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

// Adds an op-local gradient into a parent in one pass, so that a parent used
// twice receives exactly the sum of the two contributions.
inline void accumulate(Node* p, const std::vector<double>& local) {
  if (!p) return;
  for (std::size_t i = 0; i < local.size(); ++i) p->grad[i] += local[i];
}

}  // namespace detail

/// Named, insertion-ordered set of trainable tensors plus the seeded
/// generator used to initialize them.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigurationError("duplicate parameter '" + name + "'");
    t.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  /// Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor add_uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = dist(rng_);
    return add(name, std::move(t));
  }

  Tensor add_constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor(std::move(shape), value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigurationError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  /// Deep copy: fresh leaves with identical names, values and order.
  ParameterStore clone() const {
    ParameterStore out(seed_);
    out.rng_ = rng_;
    for (const auto& [name, t] : entries_) out.add(name, t.clone(true));
    return out;
  }

  void copy_values_from(const ParameterStore& other) {
    if (other.size() != size()) throw ConfigurationError("parameter store size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto src = other.entries_[i].second.values();
      auto dst = entries_[i].second.values();
      if (src.size() != dst.size() || other.entries_[i].first != entries_[i].first) {
        throw ConfigurationError("parameter mismatch at '" + entries_[i].first + "'");
      }
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace saot
