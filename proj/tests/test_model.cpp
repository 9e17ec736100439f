#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "saot/checkpoint.hpp"
#include "saot/grad_check.hpp"
#include "saot/train.hpp"

using namespace saot;
namespace fs = std::filesystem;

namespace {

constexpr AttentionVariant kVariants[] = {AttentionVariant::fourier, AttentionVariant::wavelet,
                                          AttentionVariant::spectral};

ModelConfig tiny(AttentionVariant v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.layers = 1;
  c.width = 8;
  c.fa_blocks = 2;
  c.variant = v;
  c.seed = seed;
  return c;
}

void fill(Tensor& t, double v) { std::fill(t.values().begin(), t.values().end(), v); }

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Two-level input and a smooth target on an h x w grid.
GridSample smooth_sample(std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor a = oracle::random_tensor({h, w, 1}, seed);
  for (double& v : a.values()) v = v > 0 ? 12.0 : 3.0;
  Tensor u(Shape{h, w, 1});
  const double phase = 0.3 * static_cast<double>(seed % 5);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double x = static_cast<double>(i) / (h - 1), y = static_cast<double>(j) / (w - 1);
      u.values()[i * w + j] = std::sin(std::numbers::pi * x) * std::sin(std::numbers::pi * y + phase) +
                              0.05 * a[i * w + j];
    }
  return {a, u};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("saot_model_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

// ------------------------------------------------------------------ encoder

TEST(Encode, ZeroLiftGivesZeroFeatures) {
  Model m(tiny(AttentionVariant::spectral));
  fill(m.parameters().at("encoder.weight"), 0.0);
  Tensor z = m.encode(oracle::random_tensor({6, 4, 1}, 1));
  EXPECT_EQ(oracle::max_abs(z.values()), 0.0);
}

TEST(Encode, ShapeContract) {
  ModelConfig c = tiny(AttentionVariant::spectral);
  c.width = 12;
  c.fa_blocks = 3;
  Model m(c);
  EXPECT_EQ(m.encode(Tensor(Shape{32, 32, 1})).shape(), (Shape{32, 32, 12}));
}

TEST(Encode, CoordinateChannelsAreEndpointAligned) {
  Tensor c = coordinate_channels(5, 9);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[(4 * 9 + 8) * 2], 1.0);
  EXPECT_EQ(c[(4 * 9 + 8) * 2 + 1], 1.0);
  EXPECT_EQ(c[(2 * 9 + 0) * 2], 0.5);
}

TEST(Encode, ChannelMismatchIsConfigurationError) {
  Model m(tiny(AttentionVariant::fourier));
  EXPECT_THROW(m.encode(Tensor(Shape{4, 4, 2})), ConfigurationError);
  EXPECT_THROW(m.forward(Tensor(Shape{4, 4, 2})), ConfigurationError);
}

// --------------------------------------------------------- transformer block

TEST(TransformerBlock, ZeroBranchesGiveIdentity) {
  for (auto v : kVariants) {
    ModelConfig c = tiny(v);
    Model m(c);
    auto& b = m.blocks()[0];
    // gamma = 0 and beta = 0 feed zeros to both branches; zero the output
    // maps too so the branches cannot add a bias term.
    for (auto& [name, t] : m.parameters())
      if (name.rfind("blocks.0.", 0) == 0) fill(t, 0.0);
    Tensor x = oracle::random_tensor({8, 8, 8}, 2);
    Tensor y = transformer_block(x, b);
    EXPECT_EQ(oracle::max_abs_diff(y.values(), x.values()), 0.0) << variant_name(v);
  }
}

TEST(TransformerBlock, RandomWeightsChangeInput) {
  for (auto v : kVariants) {
    Model m(tiny(v));
    Tensor x = oracle::random_tensor({8, 8, 8}, 3);
    Tensor y = transformer_block(x, m.blocks()[0]);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_GT(oracle::max_abs_diff(y.values(), x.values()), 1e-3) << variant_name(v);
  }
}

// ---------------------------------------------------------------- forward

TEST(Forward, ZeroDecoderGivesBias) {
  Model m(tiny(AttentionVariant::spectral));
  fill(m.parameters().at("decoder.weight"), 0.0);
  fill(m.parameters().at("decoder.bias"), 0.75);
  Tensor y = m.forward(oracle::random_tensor({8, 6, 1}, 1));
  for (double v : y.values()) EXPECT_EQ(v, 0.75);
}

TEST(Forward, SameParametersAcceptAnyEvenResolution) {
  for (auto v : kVariants) {
    Model m(tiny(v));
    for (std::size_t r : {4u, 6u, 16u, 32u, 64u}) {
      Tensor y = m.forward(oracle::random_tensor({r, r, 1}, r));
      ASSERT_EQ(y.shape(), (Shape{r, r, 1}));
      for (double x : y.values()) ASSERT_TRUE(std::isfinite(x));
    }
  }
}

TEST(Forward, IsBitDeterministic) {
  for (auto v : kVariants) {
    Model m(tiny(v));
    Tensor a = oracle::random_tensor({8, 8, 1}, 9);
    EXPECT_TRUE(bit_equal(m.forward(a).values(), m.forward(a).values()));
  }
}

TEST(Forward, OddGridRejectedWhenWaveletActive) {
  for (auto v : {AttentionVariant::wavelet, AttentionVariant::spectral}) {
    Model m(tiny(v));
    EXPECT_THROW(m.forward(Tensor(Shape{7, 8, 1})), DimensionError);
  }
  Model fa(tiny(AttentionVariant::fourier));
  EXPECT_EQ(fa.forward(Tensor(Shape{7, 5, 1})).shape(), (Shape{7, 5, 1}));
}

TEST(ModelConfig, ValidationRejectsBadValues) {
  ModelConfig c = tiny(AttentionVariant::spectral);
  c.layers = 0;
  EXPECT_THROW(Model{c}, ConfigurationError);
  c = tiny(AttentionVariant::wavelet);
  c.width = 10;
  EXPECT_THROW(Model{c}, ConfigurationError);
  c = tiny(AttentionVariant::fourier);
  c.fa_blocks = 3;
  EXPECT_THROW(Model{c}, ConfigurationError);
}

TEST(ModelConfig, SeedFixesInitialization) {
  Model a(tiny(AttentionVariant::spectral, 5)), b(tiny(AttentionVariant::spectral, 5));
  Model c(tiny(AttentionVariant::spectral, 6));
  Tensor x = oracle::random_tensor({8, 8, 1}, 1);
  EXPECT_TRUE(bit_equal(a.forward(x).values(), b.forward(x).values()));
  EXPECT_FALSE(bit_equal(a.forward(x).values(), c.forward(x).values()));
}

// ------------------------------------------------------------ relative L2

TEST(RelativeL2, ReferenceCases) {
  Tensor t = oracle::random_tensor({4, 4, 1}, 1);
  EXPECT_EQ(relative_l2(t, t).item(), 0.0);
  EXPECT_NEAR(relative_l2(Tensor(t.shape()), t).item(), 1.0, 1e-15);
  Tensor twice = t.clone();
  for (double& v : twice.values()) v *= 2.0;
  EXPECT_NEAR(relative_l2(twice, t).item(), 1.0, 1e-15);
  EXPECT_THROW(relative_l2(t, Tensor(t.shape())), MetricError);
}

TEST(RelativeL2, BatchMetricIsMeanOfSamples) {
  Model m(tiny(AttentionVariant::fourier));
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  std::vector<double> per;
  const double mean = mean_relative_l2(m, set, &per);
  ASSERT_EQ(per.size(), 2u);
  EXPECT_EQ(mean, (per[0] + per[1]) / 2.0);
  EXPECT_EQ(per[0], relative_l2(m.forward(set[0].a), set[0].u).item());
}

// --------------------------------------------------------------- normalizer

TEST(Normalizer, FitMatchesDirectStatistics) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(6, 4, 2)};
  const Normalizer n = Normalizer::fit(set);
  double s = 0.0, s2 = 0.0, count = 0.0;
  for (const auto& g : set)
    for (double v : g.u.values()) {
      s += v;
      count += 1.0;
    }
  const double mean = s / count;
  for (const auto& g : set)
    for (double v : g.u.values()) s2 += (v - mean) * (v - mean);
  ASSERT_EQ(n.u_mean.size(), 1u);
  EXPECT_NEAR(n.u_mean[0], mean, 1e-14);
  EXPECT_NEAR(n.u_std[0], std::sqrt(s2 / count), 1e-14);
  EXPECT_TRUE(Normalizer::fit({}).empty());
}

TEST(Normalizer, ConstantChannelOnlyShifts) {
  GridSample g = smooth_sample(4, 4, 1);
  fill(g.a, 5.0);
  const Normalizer n = Normalizer::fit({g});
  EXPECT_EQ(n.a_mean[0], 5.0);
  EXPECT_EQ(n.a_std[0], 1.0);
}

TEST(Normalizer, ForwardIsAffineAroundRawNetwork) {
  Model raw(tiny(AttentionVariant::spectral));
  Model norm = raw.clone();
  Normalizer n;
  n.a_mean = {2.0};
  n.a_std = {4.0};
  n.u_mean = {0.5};
  n.u_std = {0.25};
  norm.set_normalizer(n);
  Tensor a = oracle::random_tensor({8, 8, 1}, 3, 0.0, 10.0);
  Tensor a_std = a.clone();
  for (double& v : a_std.values()) v = (v - 2.0) / 4.0;
  const Tensor y_raw = raw.forward(a_std), y = norm.forward(a);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.25 * y_raw[i] + 0.5, 1e-14);
  EXPECT_EQ(norm.clone().normalizer().u_std, n.u_std);
  n.u_std = {1.0, 2.0};
  EXPECT_THROW(norm.set_normalizer(n), ConfigurationError);
}

// ----------------------------------------------------- end-to-end gradients

class EndToEndGradients : public ::testing::TestWithParam<AttentionVariant> {};

TEST_P(EndToEndGradients, RelativeL2OfForwardMatchesFiniteDifferences) {
  Model m(tiny(GetParam(), 3));
  GridSample s = smooth_sample(8, 8, 4);
  // Attention weight gradients sit near 1e-8 at init, where a single central
  // difference is roundoff bound at small h and truncation bound at large h.
  auto report = grad_check([&](ParameterStore&) { return relative_l2(m.forward(s.a), s.u); },
                           m.parameters(), 3e-3, GradCheckMethod::extrapolated);
  ASSERT_EQ(report.entries.size(), m.parameters().size());
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

INSTANTIATE_TEST_SUITE_P(Variants, EndToEndGradients, ::testing::ValuesIn(kVariants),
                         [](const auto& info) { return std::string(variant_name(info.param)); });

// ------------------------------------------------------------------ training

namespace {

TrainConfig quick_train(std::size_t epochs, std::size_t batch = 1) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.learning_rate = 1e-3;
  t.seed = 7;
  return t;
}

}  // namespace

TEST(Normalizer, TrainingFitsItUnlessDisabled) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  auto on = train(set, {}, tiny(AttentionVariant::fourier), quick_train(1));
  EXPECT_EQ(on.last.normalizer.u_mean, Normalizer::fit(set).u_mean);
  TrainConfig off = quick_train(1);
  off.normalize = false;
  EXPECT_TRUE(train(set, {}, tiny(AttentionVariant::fourier), off).last.normalizer.empty());
}

TEST(Train, OverfitsOneSample) {
  for (auto v : kVariants) {
    std::vector<GridSample> one = {smooth_sample(8, 8, 1)};
    auto r = train(one, {}, tiny(v), quick_train(200));
    ASSERT_EQ(r.history.size(), 201u);
    EXPECT_LT(r.final_train_rel_l2, 0.5 * r.initial_train_rel_l2)
        << variant_name(v) << ": " << r.initial_train_rel_l2 << " -> " << r.final_train_rel_l2;
    EXPECT_LT(r.history.back().train_rel_l2, r.history.front().train_rel_l2);
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2),
                                 smooth_sample(8, 8, 3)};
  TrainConfig t = quick_train(3, 2);
  t.learning_rate = 0.0;
  Model init(tiny(AttentionVariant::spectral));
  auto r = train(set, set, tiny(AttentionVariant::spectral), t);
  for (const auto& [name, p] : init.parameters()) {
    EXPECT_TRUE(bit_equal(p.values(), r.last.params.at(name).values())) << name;
  }
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2),
                                 smooth_sample(8, 8, 3)};
  std::vector<GridSample> test = {smooth_sample(8, 8, 9)};
  auto a = train(set, test, tiny(AttentionVariant::spectral), quick_train(4, 2));
  auto b = train(set, test, tiny(AttentionVariant::spectral), quick_train(4, 2));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_rel_l2, b.history[i].train_rel_l2);
    EXPECT_EQ(a.history[i].test_rel_l2, b.history[i].test_rel_l2);
  }
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  std::vector<GridSample> set;
  for (std::uint64_t s = 0; s < 5; ++s) set.push_back(smooth_sample(8, 8, s));
  TrainConfig t = quick_train(3, 3);
  auto serial = train(set, {}, tiny(AttentionVariant::wavelet), t);
  t.threads = 3;
  auto threaded = train(set, {}, tiny(AttentionVariant::wavelet), t);
  for (std::size_t i = 0; i < serial.history.size(); ++i) {
    EXPECT_EQ(serial.history[i].train_rel_l2, threaded.history[i].train_rel_l2);
  }
  for (const auto& [name, p] : serial.last.params) {
    EXPECT_TRUE(bit_equal(p.values(), threaded.last.params.at(name).values())) << name;
  }
}

TEST(Train, NonFiniteSampleIsRejected) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  set[1].a = set[1].a.clone();
  set[1].a.values()[5] = NAN;
  EXPECT_THROW(train(set, {}, tiny(AttentionVariant::fourier), quick_train(2, 1)), ValidationError);
}

TEST(Train, DivergenceReportsStep) {
  // Adam moves every weight by about lr per step, so lr = 1e200 overflows
  // the forward pass within a couple of updates.
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  TrainConfig tc = quick_train(3, 1);
  tc.learning_rate = 1e200;
  tc.schedule = LrSchedule::constant;
  try {
    train(set, {}, tiny(AttentionVariant::fourier), tc);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LE(e.step(), 5u);
    EXPECT_NE(std::string(e.what()).find("step " + std::to_string(e.step())), std::string::npos);
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1)};
  auto r = train(set, {}, tiny(AttentionVariant::spectral), quick_train(0));
  Model init(tiny(AttentionVariant::spectral));
  for (const auto& [name, p] : init.parameters()) {
    EXPECT_TRUE(bit_equal(p.values(), r.last.params.at(name).values()));
  }
  EXPECT_EQ(r.history.size(), 1u);
}

TEST(Train, BestCheckpointTracksLowestTestError) {
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  std::vector<GridSample> test = {smooth_sample(8, 8, 3)};
  auto r = train(set, test, tiny(AttentionVariant::fourier), quick_train(5, 1));
  double best = INFINITY;
  for (const auto& row : r.history) best = std::min(best, row.test_rel_l2);
  EXPECT_EQ(r.history[r.best_epoch].test_rel_l2, best);
  EXPECT_EQ(mean_relative_l2(r.best.build_model(), test), best);
}

TEST(Train, CosineScheduleDecaysToZero) {
  TrainConfig t;
  t.learning_rate = 2e-3;
  EXPECT_EQ(scheduled_lr(t, 0, 100), 2e-3);
  EXPECT_NEAR(scheduled_lr(t, 50, 100), 1e-3, 1e-18);
  EXPECT_LT(scheduled_lr(t, 99, 100), 1e-6);
  t.schedule = LrSchedule::constant;
  EXPECT_EQ(scheduled_lr(t, 99, 100), 2e-3);
}

TEST(Train, ClippingBoundsGlobalNorm) {
  ParameterStore s;
  Tensor a = s.add("a", Tensor(Shape{2}));
  Tensor b = s.add("b", Tensor(Shape{1}));
  a.grad()[0] = 3.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 4.0;
  EXPECT_EQ(clip_grad_norm(s, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

// --------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir;
  std::vector<GridSample> set = {smooth_sample(8, 8, 1), smooth_sample(8, 8, 2)};
  for (auto v : kVariants) {
    auto r = train(set, set, tiny(v), quick_train(2, 1));
    const std::string path = dir.file(std::string(variant_name(v)) + ".ckpt");
    save_checkpoint(r.last, path);
    Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back.model.variant, v);
    EXPECT_EQ(back.history.size(), r.history.size());
    EXPECT_EQ(back.metadata.at("train_resolution"), "8x8");
    EXPECT_EQ(back.optimizer.step, r.last.optimizer.step);
    EXPECT_FALSE(back.normalizer.empty());
    EXPECT_TRUE(bit_equal(back.normalizer.u_std, r.last.normalizer.u_std));
    EXPECT_TRUE(bit_equal(back.normalizer.a_mean, r.last.normalizer.a_mean));
    Tensor x = oracle::random_tensor({8, 8, 1}, 4);
    EXPECT_TRUE(bit_equal(r.last.build_model().forward(x).values(),
                          back.build_model().forward(x).values()));
  }
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  TempDir dir;
  Model m(tiny(AttentionVariant::spectral));
  const std::string path = dir.file("a.ckpt");
  save_checkpoint(make_checkpoint(m, {}), path);
  const auto size = fs::file_size(path);
  for (auto cut : {size - 1, size / 2, std::uintmax_t{3}}) {
    fs::resize_file(path, cut);
    EXPECT_THROW(load_checkpoint(path), FormatError) << cut;
    save_checkpoint(make_checkpoint(m, {}), path);
  }
}

TEST(Checkpoint, CorruptPayloadIsFormatError) {
  TempDir dir;
  Model m(tiny(AttentionVariant::fourier));
  const std::string path = dir.file("a.ckpt");
  save_checkpoint(make_checkpoint(m, {}), path);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(fs::file_size(path) - 100));
  f.put('\x5a');
  f.close();
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, BadMagicIsFormatError) {
  TempDir dir;
  const std::string path = dir.file("junk.ckpt");
  std::ofstream(path) << "definitely not a checkpoint file";
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, HeaderTensorMismatchNamesParameter) {
  TempDir dir;
  Model wide([] {
    ModelConfig c = tiny(AttentionVariant::fourier);
    c.width = 12;
    return c;
  }());
  Checkpoint c = make_checkpoint(wide, {});
  c.model.width = 8;  // header disagrees with the stored tensors
  const std::string path = dir.file("mismatch.ckpt");
  save_checkpoint(c, path);
  try {
    load_checkpoint(path);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weight"), std::string::npos) << e.what();
  }
}
