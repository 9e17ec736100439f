#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "saot/attention.hpp"

namespace saot {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t width = 64;
  std::size_t in_channels = 1;   // d_a
  std::size_t out_channels = 1;  // d_u
  std::size_t mlp_ratio = 1;
  std::size_t fa_blocks = 4;
  std::size_t fa_hidden_ratio = 1;
  bool use_locality_conv = true;
  AttentionVariant variant = AttentionVariant::spectral;
  std::uint64_t seed = 0;

  bool uses_wavelet() const { return variant != AttentionVariant::fourier; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigurationError("model config: " + m); };
    if (layers < 1) fail("layers must be >= 1");
    if (width < 1) fail("width must be >= 1");
    if (in_channels < 1 || out_channels < 1) fail("channel counts must be >= 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (uses_wavelet() && width % 4) fail("width must be divisible by 4 for wa/sa");
    if (variant != AttentionVariant::wavelet && (fa_blocks < 1 || width % fa_blocks)) {
      fail("fa_blocks must divide width");
    }
    if (fa_hidden_ratio < 1) fail("fa_hidden_ratio must be >= 1");
  }
};

/// One (input, target) pair on a common grid.
struct GridSample {
  Tensor a;  // H x W x d_a
  Tensor u;  // H x W x d_u

  std::size_t height() const { return a.dim(0); }
  std::size_t width() const { return a.dim(1); }
};

struct BlockParams {
  LayerNormParams ln1;
  SpectralAttentionParams attention;
  LayerNormParams ln2;
  MlpParams mlp;
};

/// X̂ = SA(LN(X)) + X;  X' = MLP(LN(X̂)) + X̂.
inline Tensor transformer_block(const Tensor& x, const BlockParams& p) {
  Tensor mixed = add(spectral_attention(layer_norm(x, p.ln1), p.attention), x);
  return add(mlp_forward(layer_norm(mixed, p.ln2), p.mlp), mixed);
}

/// Two channels holding the endpoint-aligned unit-square coordinates of each
/// node: (i/(H-1), j/(W-1)), with 0 for a singleton axis.
inline Tensor coordinate_channels(std::size_t h, std::size_t w) {
  Tensor c(Shape{h, w, 2});
  auto v = c.values();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      v[(i * w + j) * 2] = h > 1 ? static_cast<double>(i) / static_cast<double>(h - 1) : 0.0;
      v[(i * w + j) * 2 + 1] = w > 1 ? static_cast<double>(j) / static_cast<double>(w - 1) : 0.0;
    }
  }
  return c;
}

/// Per-channel standardization fitted on training data. Inputs are mapped
/// to zero mean and unit variance before the encoder; decoder outputs are
/// mapped back to target units. Empty vectors mean the identity map.
struct Normalizer {
  std::vector<double> a_mean, a_std, u_mean, u_std;

  bool empty() const { return a_mean.empty() && u_mean.empty(); }

  static Normalizer fit(const std::vector<GridSample>& set) {
    Normalizer n;
    if (set.empty()) return n;
    auto stats = [&](auto field, std::vector<double>& mean, std::vector<double>& sd) {
      const std::size_t c = field(set.front()).dim(2);
      std::vector<double> s1(c, 0.0), s2(c, 0.0);
      double count = 0.0;
      for (const auto& smp : set) {
        const Tensor& t = field(smp);
        for (std::size_t i = 0; i < t.size(); ++i) s1[i % c] += t[i];
        count += static_cast<double>(t.size() / c);
      }
      mean.assign(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) mean[k] = s1[k] / count;
      for (const auto& smp : set) {
        const Tensor& t = field(smp);
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double d = t[i] - mean[i % c];
          s2[i % c] += d * d;
        }
      }
      sd.assign(c, 1.0);
      for (std::size_t k = 0; k < c; ++k) {
        const double v = std::sqrt(s2[k] / count);
        sd[k] = v > 1e-12 * std::max(1.0, std::abs(mean[k])) ? v : 1.0;  // constant channel: shift only
      }
    };
    stats([](const GridSample& g) -> const Tensor& { return g.a; }, n.a_mean, n.a_std);
    stats([](const GridSample& g) -> const Tensor& { return g.u; }, n.u_mean, n.u_std);
    return n;
  }
};

/// Encoder -> L spectral-attention transformer blocks -> decoder.
///
/// Every layer is pointwise or spectral, so one parameter set accepts any
/// grid size (even sizes when a wavelet branch is present).
class Model {
 public:
  explicit Model(ModelConfig config) : config_(config), store_(config.seed) {
    config_.validate();
    const std::size_t d = config_.width;
    encoder_ = LinearParams::create(store_, "encoder", config_.in_channels + 2, d);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string prefix = "blocks." + std::to_string(l);
      BlockParams b;
      b.ln1 = LayerNormParams::create(store_, prefix + ".ln1", d);
      b.attention = SpectralAttentionParams::create(store_, prefix + ".attn", config_.variant, d,
                                                    config_.fa_blocks, config_.fa_hidden_ratio,
                                                    config_.use_locality_conv);
      b.ln2 = LayerNormParams::create(store_, prefix + ".ln2", d);
      b.mlp = MlpParams::create(store_, prefix + ".mlp", d, config_.mlp_ratio);
      blocks_.push_back(std::move(b));
    }
    decoder_ = LinearParams::create(store_, "decoder", d, config_.out_channels);
  }

  /// Same architecture with the values of `params` (names and shapes must match).
  Model(ModelConfig config, const ParameterStore& params) : Model(config) {
    store_.copy_values_from(params);
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const {
    Model m(config_, store_);
    m.normalizer_ = normalizer_;
    return m;
  }

  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) {
    if (!n.empty() && (n.a_mean.size() != config_.in_channels || n.a_std.size() != config_.in_channels ||
                       n.u_mean.size() != config_.out_channels || n.u_std.size() != config_.out_channels)) {
      throw ConfigurationError("normalizer channel counts do not match the model");
    }
    normalizer_ = std::move(n);
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const LinearParams& encoder() const { return encoder_; }
  const LinearParams& decoder() const { return decoder_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }
  std::vector<BlockParams>& blocks() { return blocks_; }

  /// Throws before any compute if `a` cannot be processed.
  void check_input(const Tensor& a) const {
    if (a.rank() != 3) {
      throw DimensionError("model input must be H x W x C, got " + shape_string(a.shape()));
    }
    if (a.dim(2) != config_.in_channels) {
      throw ConfigurationError("model expects " + std::to_string(config_.in_channels) +
                               " input channels, got " + shape_string(a.shape()));
    }
    if (config_.uses_wavelet() && (a.dim(0) % 2 || a.dim(1) % 2)) {
      throw DimensionError("variant " + std::string(variant_name(config_.variant)) +
                           " needs even spatial dimensions, got " + shape_string(a.shape()));
    }
  }

  Tensor encode(const Tensor& a) const {
    if (a.rank() != 3 || a.dim(2) != config_.in_channels) {
      throw ConfigurationError("encoder expects " + std::to_string(config_.in_channels) +
                               " input channels, got " + shape_string(a.shape()));
    }
    Tensor with_coords = concat_channels({a, coordinate_channels(a.dim(0), a.dim(1))});
    return linear_forward(with_coords, encoder_);
  }

  Tensor forward(const Tensor& a) const {
    check_input(a);
    Tensor x = encode(normalizer_.empty() ? a : standardize(a));
    for (const auto& b : blocks_) x = transformer_block(x, b);
    Tensor y = linear_forward(x, decoder_);
    if (normalizer_.empty()) return y;
    Tensor sd(y.shape());
    const std::size_t c = config_.out_channels;
    for (std::size_t i = 0; i < sd.size(); ++i) sd.values()[i] = normalizer_.u_std[i % c];
    Tensor mean(Shape{c});
    std::copy(normalizer_.u_mean.begin(), normalizer_.u_mean.end(), mean.values().begin());
    return add_bias(mul(y, sd), mean);
  }

 private:
  Tensor standardize(const Tensor& a) const {
    Tensor out(a.shape());
    const std::size_t c = config_.in_channels;
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.values()[i] = (a[i] - normalizer_.a_mean[i % c]) / normalizer_.a_std[i % c];
    }
    return out;
  }

  ModelConfig config_;
  Normalizer normalizer_;
  ParameterStore store_;
  LinearParams encoder_;
  std::vector<BlockParams> blocks_;
  LinearParams decoder_;
};

/// Mean over samples of the per-sample relative L2 error.
inline double mean_relative_l2(const Model& model, const std::vector<GridSample>& samples,
                               std::vector<double>* per_sample = nullptr) {
  NoGradGuard no_grad;
  double total = 0.0;
  if (per_sample) per_sample->clear();
  for (const auto& s : samples) {
    const double e = relative_l2(model.forward(s.a), s.u).item();
    total += e;
    if (per_sample) per_sample->push_back(e);
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

}  // namespace saot
