#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "saot/binary_io.hpp"
#include "saot/kv_config.hpp"
#include "saot/model.hpp"
#include "saot/optim.hpp"

namespace saot {

/// One row of the training log. Row 0 is the evaluation before any update.
struct EpochMetrics {
  std::size_t epoch = 0;
  double train_rel_l2 = 0.0;
  double test_rel_l2 = 0.0;
  double wall_seconds = 0.0;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParameterStore params;
  Normalizer normalizer;
  OptimizerState optimizer;
  std::vector<EpochMetrics> history;
  std::map<std::string, std::string> metadata;

  Model build_model() const {
    Model m(model, params);
    m.set_normalizer(normalizer);
    return m;
  }
};

inline Checkpoint make_checkpoint(const Model& m, const TrainConfig& t) {
  return {m.config(), t, m.parameters().clone(), m.normalizer(), {}, {}, {}};
}

// ---------------------------------------------------------- config mapping

inline void write_model_config(KvConfig& kv, const ModelConfig& c, const std::string& prefix = "") {
  kv.set(prefix + "layers", std::to_string(c.layers));
  kv.set(prefix + "width", std::to_string(c.width));
  kv.set(prefix + "in_channels", std::to_string(c.in_channels));
  kv.set(prefix + "out_channels", std::to_string(c.out_channels));
  kv.set(prefix + "mlp_ratio", std::to_string(c.mlp_ratio));
  kv.set(prefix + "fa_blocks", std::to_string(c.fa_blocks));
  kv.set(prefix + "fa_hidden_ratio", std::to_string(c.fa_hidden_ratio));
  kv.set(prefix + "use_locality_conv", c.use_locality_conv ? "true" : "false");
  kv.set(prefix + "variant", std::string(variant_name(c.variant)));
  kv.set(prefix + "model_seed", std::to_string(c.seed));
}

inline ModelConfig read_model_config(const KvConfig& kv, ModelConfig c = {},
                                     const std::string& prefix = "") {
  c.layers = kv.get_uint(prefix + "layers", c.layers);
  c.width = kv.get_uint(prefix + "width", c.width);
  c.in_channels = kv.get_uint(prefix + "in_channels", c.in_channels);
  c.out_channels = kv.get_uint(prefix + "out_channels", c.out_channels);
  c.mlp_ratio = kv.get_uint(prefix + "mlp_ratio", c.mlp_ratio);
  c.fa_blocks = kv.get_uint(prefix + "fa_blocks", c.fa_blocks);
  c.fa_hidden_ratio = kv.get_uint(prefix + "fa_hidden_ratio", c.fa_hidden_ratio);
  c.use_locality_conv = kv.get_bool(prefix + "use_locality_conv", c.use_locality_conv);
  if (kv.has(prefix + "variant")) c.variant = parse_variant(kv.get_string(prefix + "variant", ""));
  c.seed = kv.get_uint(prefix + "model_seed", c.seed);
  return c;
}

inline void write_train_config(KvConfig& kv, const TrainConfig& c, const std::string& prefix = "") {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv.set(prefix + "epochs", std::to_string(c.epochs));
  kv.set(prefix + "learning_rate", num(c.learning_rate));
  kv.set(prefix + "batch_size", std::to_string(c.batch_size));
  kv.set(prefix + "schedule", schedule_name(c.schedule));
  kv.set(prefix + "beta1", num(c.beta1));
  kv.set(prefix + "beta2", num(c.beta2));
  kv.set(prefix + "adam_eps", num(c.adam_eps));
  kv.set(prefix + "weight_decay", num(c.weight_decay));
  kv.set(prefix + "clip_norm", num(c.clip_norm));
  kv.set(prefix + "train_seed", std::to_string(c.seed));
  kv.set(prefix + "normalize", c.normalize ? "true" : "false");
}

inline TrainConfig read_train_config(const KvConfig& kv, TrainConfig c = {},
                                     const std::string& prefix = "") {
  c.epochs = kv.get_uint(prefix + "epochs", c.epochs);
  c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
  c.batch_size = kv.get_uint(prefix + "batch_size", c.batch_size);
  if (kv.has(prefix + "schedule")) c.schedule = parse_schedule(kv.get_string(prefix + "schedule", ""));
  c.beta1 = kv.get_double(prefix + "beta1", c.beta1);
  c.beta2 = kv.get_double(prefix + "beta2", c.beta2);
  c.adam_eps = kv.get_double(prefix + "adam_eps", c.adam_eps);
  c.weight_decay = kv.get_double(prefix + "weight_decay", c.weight_decay);
  c.clip_norm = kv.get_double(prefix + "clip_norm", c.clip_norm);
  c.seed = kv.get_uint(prefix + "train_seed", c.seed);
  c.normalize = kv.get_bool(prefix + "normalize", c.normalize);
  return c;
}

// ------------------------------------------------------------ file format
//
//   "SAOTCK1" u32 version
//   str config header (key = value text, model.* and train.* keys)
//   u64 metadata count, (str key, str value)*
//   u64 tensor count, per tensor: str name, u32 rank, u64 dims[rank], f64 values
//   normalizer: 4 x (u64 n, f64 values[n]) for a_mean, a_std, u_mean, u_std
//   u64 optimizer step, u8 has_moments, [f64 m, f64 v per tensor]
//   u64 history rows, per row: u64 epoch, f64 train, f64 test, f64 seconds
//   u64 FNV-1a checksum of everything above

inline constexpr std::string_view kCheckpointMagic = "SAOTCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t save_checkpoint(const Checkpoint& c, const std::string& path) {
  KvConfig header;
  write_model_config(header, c.model, "model.");
  write_train_config(header, c.train, "train.");

  io::Writer w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.str(header.to_string());
  w.u64(c.metadata.size());
  for (const auto& [k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u64(c.params.size());
  for (const auto& [name, t] : c.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.doubles(t.values());
  }
  for (const auto* v : {&c.normalizer.a_mean, &c.normalizer.a_std, &c.normalizer.u_mean,
                        &c.normalizer.u_std}) {
    w.u64(v->size());
    w.doubles(*v);
  }
  const bool moments = c.optimizer.m.size() == c.params.size() && c.params.size() > 0;
  w.u64(c.optimizer.step);
  w.u8(moments ? 1 : 0);
  if (moments) {
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      w.doubles(c.optimizer.m[i]);
      w.doubles(c.optimizer.v[i]);
    }
  }
  w.u64(c.history.size());
  for (const auto& r : c.history) {
    w.u64(r.epoch);
    w.f64(r.train_rel_l2);
    w.f64(r.test_rel_l2);
    w.f64(r.wall_seconds);
  }
  return w.finish();
}

/// Reads and fully validates a checkpoint; nothing is returned unless the
/// whole file, including its checksum, is intact.
inline Checkpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kCheckpointMagic);
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint c;
  try {
    const KvConfig header = KvConfig::parse(r.str(), path);
    c.model = read_model_config(header, {}, "model.");
    c.train = read_train_config(header, {}, "train.");
    c.model.validate();
  } catch (const ConfigurationError& e) {
    throw FormatError("'" + path + "': bad config header: " + e.what());
  }
  const std::uint64_t n_meta = r.u64();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }

  // The header fixes the architecture; every stored tensor must match it.
  const Model reference(c.model);
  const ParameterStore& expected = reference.parameters();
  const std::uint64_t count = r.u64();
  if (count != expected.size()) {
    throw FormatError("'" + path + "': " + std::to_string(count) + " tensors stored, config '" +
                      std::string(variant_name(c.model.variant)) + "' needs " +
                      std::to_string(expected.size()));
  }
  c.params = ParameterStore(c.model.seed);
  for (const auto& [want_name, want] : expected) {
    const std::string name = r.str();
    if (name != want_name) {
      throw FormatError("'" + path + "': parameter '" + name + "' where config expects '" +
                        want_name + "'");
    }
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("'" + path + "': parameter '" + name + "' has bad rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != want.shape()) {
      throw FormatError("'" + path + "': parameter '" + name + "' has shape " +
                        shape_string(shape) + ", config expects " + shape_string(want.shape()));
    }
    Tensor t(shape);
    r.doubles(t.values());
    c.params.add(name, t);
  }
  for (auto* v : {&c.normalizer.a_mean, &c.normalizer.a_std, &c.normalizer.u_mean,
                  &c.normalizer.u_std}) {
    const std::uint64_t n = r.u64();
    if (n > 64) throw FormatError("'" + path + "': bad normalizer length");
    v->resize(n);
    r.doubles(*v);
  }
  try {
    reference.clone().set_normalizer(c.normalizer);
  } catch (const ConfigurationError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  c.optimizer.step = r.u64();
  if (r.u8()) {
    for (const auto& [_, t] : expected) {
      c.optimizer.m.emplace_back(t.size());
      c.optimizer.v.emplace_back(t.size());
      r.doubles(c.optimizer.m.back());
      r.doubles(c.optimizer.v.back());
    }
  }
  const std::uint64_t rows = r.u64();
  if (rows > r.remaining() / 32) throw FormatError("'" + path + "' is truncated");
  for (std::uint64_t i = 0; i < rows; ++i) {
    EpochMetrics m;
    m.epoch = r.u64();
    m.train_rel_l2 = r.f64();
    m.test_rel_l2 = r.f64();
    m.wall_seconds = r.f64();
    c.history.push_back(m);
  }
  r.finish();
  return c;
}

}  // namespace saot
