#pragma once

#include <string>

#include "saot/ops.hpp"

namespace saot {

struct LinearParams {
  Tensor weight;  // in x out
  Tensor bias;    // out, or undefined

  static LinearParams create(ParameterStore& store, const std::string& prefix, std::size_t in,
                             std::size_t out, bool with_bias = true) {
    LinearParams p;
    p.weight = store.add_uniform(prefix + ".weight", Shape{in, out}, in);
    if (with_bias) p.bias = store.add_constant(prefix + ".bias", Shape{out}, 0.0);
    return p;
  }
};

inline Tensor linear_forward(const Tensor& x, const LinearParams& p) {
  return linear(x, p.weight, p.bias);
}

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormParams create(ParameterStore& store, const std::string& prefix,
                                std::size_t width) {
    return {store.add_constant(prefix + ".gamma", Shape{width}, 1.0),
            store.add_constant(prefix + ".beta", Shape{width}, 0.0)};
  }
};

inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

/// Two-layer feedforward network width -> ratio*width -> width.
struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;
  Activation activation = Activation::gelu;

  static MlpParams create(ParameterStore& store, const std::string& prefix, std::size_t width,
                          std::size_t ratio) {
    MlpParams p;
    p.fc1 = LinearParams::create(store, prefix + ".fc1", width, ratio * width);
    p.fc2 = LinearParams::create(store, prefix + ".fc2", ratio * width, width);
    return p;
  }
};

inline Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  return linear_forward(activate(linear_forward(x, p.fc1), p.activation), p.fc2);
}

}  // namespace saot
