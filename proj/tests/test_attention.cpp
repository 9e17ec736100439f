#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "saot/analysis.hpp"
#include "saot/attention.hpp"
#include "saot/grad_check.hpp"

using namespace saot;

namespace {

double relative_diff(std::span<const double> got, std::span<const double> want) {
  return oracle::max_abs_diff(got, want) / std::max(oracle::max_abs(want), 1e-300);
}

void fill(Tensor& t, double v) { std::fill(t.values().begin(), t.values().end(), v); }

void set_identity(Tensor& w) {
  fill(w, 0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i) w.values()[i * w.dim(1) + i] = 1.0;
}

// Loss whose gradient reaches every output entry with a distinct weight.
Tensor probe_loss(const Tensor& out, std::uint64_t seed) {
  return sum(mul(out, oracle::random_tensor(out.shape(), seed)));
}

}  // namespace

// ---------------------------------------------------------------- projections

TEST(ProjectQkv, IdentityWeightsReturnInput) {
  ParameterStore store(1);
  auto p = QkvProjection::create(store, "qkv", 5);
  set_identity(p.wq);
  set_identity(p.wk);
  set_identity(p.wv);
  Tensor x = oracle::random_tensor({7, 5}, 3);
  Qkv r = project_qkv(x, p);
  for (const Tensor* t : {&r.q, &r.k, &r.v}) {
    EXPECT_EQ(oracle::max_abs_diff(t->values(), x.values()), 0.0);
  }
}

TEST(ProjectQkv, ZeroValueWeightsGiveZeroValues) {
  ParameterStore store(2);
  auto p = QkvProjection::create(store, "qkv", 4);
  fill(p.wv, 0.0);
  Qkv r = project_qkv(oracle::random_tensor({6, 4}, 4, -5, 5), p);
  EXPECT_EQ(oracle::max_abs(r.v.values()), 0.0);
}

TEST(ProjectQkv, MatchesMatmulOracle) {
  ParameterStore store(5);
  auto p = QkvProjection::create(store, "qkv", 6);
  Tensor x = oracle::random_tensor({9, 6}, 6);
  std::vector<double> xv(x.values().begin(), x.values().end());
  Qkv r = project_qkv(x, p);
  const std::pair<const Tensor*, const Tensor*> pairs[] = {{&r.q, &p.wq}, {&r.k, &p.wk}, {&r.v, &p.wv}};
  for (auto [out, w] : pairs) {
    auto want = oracle::matmul(xv, {w->values().begin(), w->values().end()}, {}, 9, 6, 6);
    EXPECT_LT(oracle::max_abs_diff(out->values(), want), 1e-14);
  }
}

TEST(ProjectQkv, WidthMismatchThrows) {
  ParameterStore store(1);
  auto p = QkvProjection::create(store, "qkv", 4);
  EXPECT_THROW(project_qkv(Tensor(Shape{3, 5}), p), DimensionError);
}

// ------------------------------------------------------- softmax reference

TEST(SoftmaxReference, SingleTokenReturnsItsValue) {
  Tensor q = oracle::random_tensor({1, 4}, 1), k = oracle::random_tensor({1, 4}, 2);
  Tensor v = oracle::random_tensor({1, 3}, 3);
  Tensor s = softmax_attention_reference(q, k, v, 2.0);
  EXPECT_EQ(oracle::max_abs_diff(s.values(), v.values()), 0.0);
}

TEST(SoftmaxReference, IdenticalKeysAverageValues) {
  Tensor q = oracle::random_tensor({5, 3}, 7);
  Tensor k(Shape{5, 3});
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t c = 0; c < 3; ++c) k.values()[j * 3 + c] = 0.3 * c - 0.2;
  Tensor v = oracle::random_tensor({5, 2}, 8);
  Tensor s = softmax_attention_reference(q, k, v, std::sqrt(3.0));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 5; ++j) mean += v[j * 2 + c] / 5.0;
      EXPECT_NEAR(s[i * 2 + c], mean, 1e-14);
    }
}

TEST(SoftmaxReference, SmallTemperatureSelectsArgmax) {
  Tensor q(Shape{1, 2}, std::vector<double>{1.0, 0.0});
  Tensor k(Shape{3, 2}, std::vector<double>{0.2, 0.0, 0.9, 0.0, -0.5, 0.0});
  Tensor v(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  double prev = INFINITY;
  for (double tau : {1.0, 0.1, 0.01, 1e-3}) {
    Tensor s = softmax_attention_reference(q, k, v, tau);
    const double err = std::abs(s[0] - 3.0) + std::abs(s[1] - 4.0);
    EXPECT_LE(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(SoftmaxReference, RejectsNonPositiveTemperature) {
  Tensor q(Shape{2, 2});
  EXPECT_THROW(softmax_attention_reference(q, q, q, 0.0), ConfigurationError);
}

// ---------------------------------------------------------- linear attention

TEST(LinearAttention, SingleTokenReturnsValueUpToStabilizer) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor q = oracle::random_tensor({1, 4}, seed), k = oracle::random_tensor({1, 4}, seed + 100);
    Tensor v = oracle::random_tensor({1, 4}, seed + 200);
    Tensor s = linear_attention(q, k, v);
    double den = 0.0;
    for (std::size_t a = 0; a < 4; ++a) den += oracle::phi(q[a]) * oracle::phi(k[a]);
    // out = v · den / (den + eps), so the deviation is bounded by eps / den.
    const double bound = kLinearAttentionEps / den * oracle::max_abs(v.values()) + 1e-15;
    EXPECT_LE(oracle::max_abs_diff(s.values(), v.values()), bound);
  }
}

TEST(LinearAttention, ConstantValuesAreReproduced) {
  Tensor q = oracle::random_tensor({10, 4}, 1), k = oracle::random_tensor({10, 4}, 2);
  Tensor v(Shape{10, 4});
  for (std::size_t j = 0; j < 10; ++j)
    for (std::size_t c = 0; c < 4; ++c) v.values()[j * 4 + c] = 0.5 + c;
  Tensor s = linear_attention(q, k, v);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(s[i * 4 + c], 0.5 + c, 1e-6 * (0.5 + c));
}

TEST(LinearAttention, ShapeMismatchThrows) {
  EXPECT_THROW(linear_attention(Tensor(Shape{3, 4}), Tensor(Shape{3, 5}), Tensor(Shape{3, 4})),
               DimensionError);
  EXPECT_THROW(linear_attention(Tensor(Shape{3, 4}), Tensor(Shape{3, 4}), Tensor(Shape{2, 4})),
               DimensionError);
}

struct AttentionSize {
  std::size_t n;
  std::size_t d;
};

class LinearAttentionOracle : public ::testing::TestWithParam<AttentionSize> {};

TEST_P(LinearAttentionOracle, MatchesPairwiseEvaluation) {
  const auto [n, d] = GetParam();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor q = oracle::random_tensor({n, d}, 3 * seed, -2, 2);
    Tensor k = oracle::random_tensor({n, d}, 3 * seed + 1, -2, 2);
    Tensor v = oracle::random_tensor({n, d}, 3 * seed + 2, -2, 2);
    auto want = oracle::direct_linear_attention(q, k, v, kLinearAttentionEps);
    EXPECT_LT(relative_diff(linear_attention(q, k, v).values(), want), 1e-8)
        << "n=" << n << " d=" << d << " seed=" << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, LinearAttentionOracle,
                         ::testing::Values(AttentionSize{1, 4}, AttentionSize{7, 4},
                                           AttentionSize{64, 4}, AttentionSize{256, 4},
                                           AttentionSize{1, 16}, AttentionSize{7, 16},
                                           AttentionSize{64, 16}, AttentionSize{256, 16}));

TEST(LinearAttention, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParameterStore store(seed);
    Tensor q = store.add("q", oracle::random_tensor({5, 3}, seed));
    Tensor k = store.add("k", oracle::random_tensor({5, 3}, seed + 50));
    Tensor v = store.add("v", oracle::random_tensor({5, 2}, seed + 90));
    auto report = grad_check(
        [&](ParameterStore&) { return probe_loss(linear_attention(q, k, v), seed + 7); }, store);
    EXPECT_TRUE(report.passed(1e-4)) << "seed " << seed << ": " << report.max_rel_error();
  }
}

TEST(LinearAttention, TimeGrowsLinearlyInSequenceLength) {
  const auto medians = linear_attention_scaling({1024, 2048, 4096, 8192}, 64, 5);
  for (std::size_t i = 1; i < medians.size(); ++i) {
    EXPECT_LE(medians[i] / medians[i - 1], 2.5) << "doubling step " << i;
  }
}

// ---------------------------------------------------------- Fourier attention

TEST(FourierAttention, IdentityMlpDoublesInput) {
  ParameterStore store(3);
  auto p = FourierAttentionParams::create(store, "fa", 8, 4, 1);
  p.set_identity();
  for (Shape shape : {Shape{8, 8, 8}, Shape{6, 10, 8}}) {
    Tensor x = oracle::random_tensor(shape, 11);
    Tensor y = fourier_attention(x, p);
    std::vector<double> twice(x.values().begin(), x.values().end());
    for (double& v : twice) v *= 2.0;
    EXPECT_LT(relative_diff(y.values(), twice), 1e-8);
  }
}

TEST(FourierAttention, ZeroMlpReturnsInputExactly) {
  ParameterStore store(3);
  auto p = FourierAttentionParams::create(store, "fa", 8, 2, 2);
  p.set_zero();
  Tensor x = oracle::random_tensor({8, 6, 8}, 12);
  EXPECT_EQ(oracle::max_abs_diff(fourier_attention(x, p).values(), x.values()), 0.0);
}

TEST(FourierAttention, IdentityModeNeedsUnitHiddenRatio) {
  ParameterStore store(3);
  auto p = FourierAttentionParams::create(store, "fa", 8, 2, 2);
  EXPECT_THROW(p.set_identity(), ConfigurationError);
}

// The mode-wise map commutes with a circular shift when it is complex-linear:
// a shift multiplies each mode by a phase, which passes through complex
// weights but not through a nonlinearity applied to re/im separately or
// through an additive bias.
TEST(FourierAttention, CircularShiftEquivariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParameterStore store(seed);
    auto p = FourierAttentionParams::create(store, "fa", 8, 2, 2);
    p.activation = Activation::identity;
    Tensor x = oracle::random_tensor({8, 12, 8}, seed + 1000);
    const std::size_t dh = 1 + seed % 7, dw = 2 + seed % 11;
    Tensor shifted_out = fourier_attention(oracle::roll(x, dh, dw), p);
    Tensor out_shifted = oracle::roll(fourier_attention(x, p), dh, dw);
    EXPECT_LT(relative_diff(shifted_out.values(), out_shifted.values()), 1e-8) << "seed " << seed;
  }
}

TEST(FourierAttention, BlockCountMustDivideWidth) {
  ParameterStore store(0);
  EXPECT_THROW(FourierAttentionParams::create(store, "fa", 10, 4, 1), ConfigurationError);
}

TEST(FourierAttention, WidthMismatchThrows) {
  ParameterStore store(0);
  auto p = FourierAttentionParams::create(store, "fa", 8, 4, 1);
  EXPECT_THROW(fourier_attention(Tensor(Shape{4, 4, 6}), p), DimensionError);
}

// ---------------------------------------------------------- Wavelet attention

TEST(WaveletAttention, ZeroWeightsAnnihilate) {
  ParameterStore store(4);
  auto p = WaveletAttentionParams::create(store, "wa", 8, true);
  for (auto& [_, t] : store) fill(t, 0.0);
  Tensor y = wavelet_attention(oracle::random_tensor({6, 8, 8}, 1), p);
  EXPECT_EQ(oracle::max_abs(y.values()), 0.0);
}

TEST(WaveletAttention, ShapeContract) {
  ParameterStore store(4);
  auto p = WaveletAttentionParams::create(store, "wa", 32, true);
  WaveletTrace trace;
  Tensor y = wavelet_attention(oracle::random_tensor({16, 16, 32}, 2), p, &trace);
  EXPECT_EQ(trace.reduced.shape(), (Shape{16, 16, 8}));
  EXPECT_EQ(trace.subbands.shape(), (Shape{8, 8, 32}));
  EXPECT_EQ(trace.local.shape(), (Shape{8, 8, 32}));
  EXPECT_EQ(trace.attended.shape(), (Shape{64, 32}));
  EXPECT_EQ(trace.reconstructed.shape(), (Shape{16, 16, 8}));
  EXPECT_EQ(y.shape(), (Shape{16, 16, 32}));
}

TEST(WaveletAttention, AttentionStepMatchesPairwiseOracleOnSubbandTokens) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore store(seed);
    auto p = WaveletAttentionParams::create(store, "wa", 8, false);
    set_identity(p.qkv.wq);
    set_identity(p.qkv.wk);
    set_identity(p.qkv.wv);
    WaveletTrace trace;
    wavelet_attention(oracle::random_tensor({8, 12, 8}, seed + 9), p, &trace);
    Tensor tokens(Shape{24, 8}, std::vector<double>(trace.subbands.values().begin(),
                                                   trace.subbands.values().end()));
    auto want = oracle::direct_linear_attention(tokens, tokens, tokens, kLinearAttentionEps);
    EXPECT_LT(relative_diff(trace.attended.values(), want), 1e-8);
  }
}

// Subband channel blocks are laid out (LL, LH, HL, HH) and undone in the
// same order: the stacked layout matches fwt_haar's separate subbands.
TEST(WaveletAttention, SubbandsFollowFixedOrder) {
  ParameterStore store(6);
  auto p = WaveletAttentionParams::create(store, "wa", 8, true);
  WaveletTrace trace;
  wavelet_attention(oracle::random_tensor({4, 6, 8}, 3), p, &trace);
  WaveletSubbands s = fwt_haar(trace.reduced);
  const Tensor* parts[] = {&s.ll, &s.lh, &s.hl, &s.hh};
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_EQ(trace.subbands[t * 8 + b * 2 + c], (*parts[b])[t * 2 + c]);
}

TEST(WaveletAttention, WidthMustBeMultipleOfFour) {
  ParameterStore store(0);
  EXPECT_THROW(WaveletAttentionParams::create(store, "wa", 10, true), ConfigurationError);
}

TEST(WaveletAttention, OddGridRejected) {
  ParameterStore store(0);
  auto p = WaveletAttentionParams::create(store, "wa", 8, true);
  EXPECT_THROW(wavelet_attention(Tensor(Shape{5, 4, 8}), p), DimensionError);
}

// ---------------------------------------------------------------- gated fusion

TEST(GatedFusion, EqualBranchesPassThrough) {
  ParameterStore store(7);
  auto p = GatedFusionParams::create(store, "g", 6);
  Tensor a = oracle::random_tensor({4, 5, 6}, 1);
  EXPECT_LT(oracle::max_abs_diff(gated_fusion(a, a, p).values(), a.values()), 1e-15);
}

TEST(GatedFusion, ZeroGateAverages) {
  ParameterStore store(7);
  auto p = GatedFusionParams::create(store, "g", 3);
  fill(p.gate.weight, 0.0);
  Tensor a = oracle::random_tensor({5, 3}, 1), b = oracle::random_tensor({5, 3}, 2);
  Tensor gate;
  Tensor y = gated_fusion(a, b, p, &gate);
  for (double g : gate.values()) EXPECT_EQ(g, 0.5);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.5 * (a[i] + b[i]), 1e-15);
}

TEST(GatedFusion, LargeBiasSelectsFourierBranchMonotonically) {
  ParameterStore store(7);
  auto p = GatedFusionParams::create(store, "g", 3);
  Tensor a = oracle::random_tensor({5, 3}, 1), b = oracle::random_tensor({5, 3}, 2);
  double prev = INFINITY;
  for (double bias : {0.0, 2.0, 5.0, 10.0, 40.0}) {
    fill(p.gate.bias, bias);
    const double err = oracle::max_abs_diff(gated_fusion(a, b, p).values(), a.values());
    EXPECT_LE(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(GatedFusion, GateStaysInsideOpenUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParameterStore store(seed);
    auto p = GatedFusionParams::create(store, "g", 4);
    Tensor gate;
    gated_fusion(oracle::random_tensor({6, 4}, seed, -10, 10),
                 oracle::random_tensor({6, 4}, seed + 1, -10, 10), p, &gate);
    for (double g : gate.values()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
  }
}

TEST(GatedFusion, ShapeMismatchThrows) {
  ParameterStore store(0);
  auto p = GatedFusionParams::create(store, "g", 4);
  EXPECT_THROW(gated_fusion(Tensor(Shape{2, 4}), Tensor(Shape{3, 4}), p), DimensionError);
}

// ---------------------------------------------------------- spectral attention

TEST(SpectralAttention, PassthroughBranchesReturnInput) {
  ParameterStore store(8);
  auto p = SpectralAttentionParams::create(store, "sa", AttentionVariant::spectral, 8, 4, 1, true);
  p.fourier->set_zero();
  // WA passthrough: output linear copies X and ignores X^r.
  auto& out = p.wavelet->out;
  fill(out.weight, 0.0);
  for (std::size_t i = 0; i < 8; ++i) out.weight.values()[i * 8 + i] = 1.0;
  Tensor x = oracle::random_tensor({6, 8, 8}, 5);
  EXPECT_LT(oracle::max_abs_diff(spectral_attention(x, p).values(), x.values()), 1e-15);
}

TEST(SpectralAttention, PreservesShape) {
  for (auto variant : {AttentionVariant::fourier, AttentionVariant::wavelet,
                       AttentionVariant::spectral}) {
    ParameterStore store(9);
    auto p = SpectralAttentionParams::create(store, "sa", variant, 16, 4, 1, true);
    Tensor y = spectral_attention(oracle::random_tensor({8, 12, 16}, 1), p);
    EXPECT_EQ(y.shape(), (Shape{8, 12, 16})) << variant_name(variant);
  }
}

TEST(SpectralAttention, FullLayerGradCheck) {
  ParameterStore store(10);
  auto p = SpectralAttentionParams::create(store, "sa", AttentionVariant::spectral, 8, 2, 1, true);
  Tensor x = store.add("x", oracle::random_tensor({8, 8, 8}, 2));
  // Some query-weight gradients are ~1e-6 against a loss of order 10, too
  // small for a single central difference to resolve at any step; the
  // extrapolated difference removes truncation error from a coarse start.
  auto report = grad_check(
      [&](ParameterStore&) { return probe_loss(spectral_attention(x, p), 3); }, store, 3e-3,
      GradCheckMethod::extrapolated);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

TEST(SpectralAttention, NoDeadParameters) {
  for (auto variant : {AttentionVariant::fourier, AttentionVariant::wavelet,
                       AttentionVariant::spectral}) {
    for (bool local : {true, false}) {
      ParameterStore store(11);
      auto p = SpectralAttentionParams::create(store, "sa", variant, 8, 2, 2, local);
      // Generic values everywhere, so no entry sits where its gradient
      // vanishes by coincidence (e.g. all-zero biases feeding a zero delta).
      std::uint64_t s = 100;
      for (auto& [_, t] : store) {
        auto r = oracle::random_tensor(t.shape(), s++, -0.5, 0.5);
        std::copy(r.values().begin(), r.values().end(), t.values().begin());
      }
      store.zero_grad();
      probe_loss(spectral_attention(oracle::random_tensor({8, 8, 8}, 4), p), 5).backward();
      for (auto& [name, t] : store) {
        std::size_t zeros = 0;
        for (double g : t.grad()) zeros += g == 0.0;
        EXPECT_EQ(zeros, 0u) << variant_name(variant) << " " << name;
      }
    }
  }
}

TEST(AttentionVariant, NamesRoundTrip) {
  for (auto v : {AttentionVariant::fourier, AttentionVariant::wavelet, AttentionVariant::spectral}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_THROW(parse_variant("xx"), ConfigurationError);
}
