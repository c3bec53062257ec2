#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "cosnet/coattention.hpp"
#include "cosnet/gradcheck.hpp"

using namespace cosnet;

namespace {

FeatureMap random_map(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  return FeatureMap(random_normal({h, w, c}, rng, 1.0));
}

CoattentionParams vanilla_with(const Tensor& W) {
  Rng rng(0);
  auto p = CoattentionParams::init(Variant::Vanilla, W.dim(0), rng);
  p.weight = W;
  return p;
}

// Z column i = sum_j V^(j) s_ji, written as an explicit loop.
std::vector<double> summary_oracle(const FeatureMap& ref, const Tensor& S) {
  const std::size_t C = ref.channels(), N = ref.positions();
  std::vector<double> z(C * N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t c = 0; c < C; ++c) z[c * N + i] += ref.tensor().data()[j * C + c] * S.at({j, i});
  return z;
}

}  // namespace

TEST(FeatureMap, FlatColumnIsPositionFeature) {
  Rng rng(1);
  auto V = random_map(rng, 2, 3, 4);
  auto F = V.flat();
  ASSERT_EQ(F.shape(), (Shape{4, 6}));
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(F.at({c, y * 3 + x}), V.tensor().at({y, x, c}));
}

TEST(Affinity, AllOnesSingleChannel) {
  auto p = vanilla_with(Tensor({1, 1}, {1.0}));
  FeatureMap V(Tensor::full({1, 2, 1}, 1.0));
  auto S = compute_affinity(p, V, V);
  EXPECT_EQ(S.shape(), (Shape{2, 2}));
  for (double v : S.data()) EXPECT_EQ(v, 1.0);
}

TEST(Affinity, OrthonormalColumnsGiveIdentity) {
  auto p = vanilla_with(Tensor::eye(2));
  FeatureMap V(Tensor({1, 2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(compute_affinity(p, V, V).values(), Tensor::eye(2).values());
}

TEST(Affinity, ExplicitBilinearFormOracle) {
  Rng rng(4);
  auto W = random_normal({3, 3}, rng, 1.0);
  auto p = vanilla_with(W);
  auto Va = random_map(rng, 2, 2, 3), Vb = random_map(rng, 2, 2, 3);
  auto S = compute_affinity(p, Va, Vb);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t q = 0; q < 4; ++q) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t d = 0; d < 3; ++d)
          s += Vb.tensor().data()[r * 3 + c] * W.at({c, d}) * Va.tensor().data()[q * 3 + d];
      EXPECT_NEAR(S.at({r, q}), s, 1e-12);
    }
}

TEST(Affinity, StaticChannelWiseWithUnitDiagonalsEqualsIdentityVanilla) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto cw = CoattentionParams::init(Variant::ChannelWise, 5, rng, ChannelMode::Static);
    auto van = vanilla_with(Tensor::eye(5));
    auto Va = random_map(rng, 3, 2, 5), Vb = random_map(rng, 3, 2, 5);
    EXPECT_EQ(compute_affinity(cw, Va, Vb).values(), compute_affinity(van, Va, Vb).values());
  }
}

TEST(Affinity, StaticChannelWiseEqualsDiagonalVanilla) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto cw = CoattentionParams::init(Variant::ChannelWise, 4, rng, ChannelMode::Static);
    cw.d_a = random_uniform({4}, rng, 0.1, 2.0);
    cw.d_b = random_uniform({4}, rng, 0.1, 2.0);
    auto W = Tensor::zeros({4, 4});
    std::vector<double> w(16, 0.0);
    for (std::size_t c = 0; c < 4; ++c) w[c * 5] = cw.d_a.data()[c] * cw.d_b.data()[c];
    auto van = vanilla_with(Tensor({4, 4}, w));
    auto Va = random_map(rng, 2, 3, 4), Vb = random_map(rng, 2, 3, 4);
    auto a = compute_affinity(cw, Va, Vb), b = compute_affinity(van, Va, Vb);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
  }
}

TEST(Affinity, SeWeightsComeFromTheOtherBranch) {
  // The SE weights scaling the reference depend only on the pooled query.
  // Changing the query's pooled features must change S even where the
  // query's own features at a position are identical, and the static-mode
  // oracle with those weights must agree.
  Rng rng(8);
  auto p = CoattentionParams::init(Variant::ChannelWise, 3, rng, ChannelMode::SE);
  auto Va = random_map(rng, 2, 2, 3), Vb = random_map(rng, 2, 2, 3);
  auto S = compute_affinity(p, Va, Vb);

  auto se = [](const FeatureMap& V, const Tensor& W, const Tensor& b) {
    std::vector<double> g(3, 0.0), out(3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c) g[c] += V.tensor().data()[i * 3 + c] / 4.0;
    for (std::size_t d = 0; d < 3; ++d) {
      double h = b.data()[d];
      for (std::size_t c = 0; c < 3; ++c) h += g[c] * W.at({c, d});
      out[d] = 1.0 / (1.0 + std::exp(-h));
    }
    return Tensor({3}, out);
  };
  auto oracle = CoattentionParams::init(Variant::ChannelWise, 3, rng, ChannelMode::Static);
  oracle.d_a = se(Va, p.se_a_weight, p.se_a_bias);
  oracle.d_b = se(Vb, p.se_b_weight, p.se_b_bias);
  auto expect = compute_affinity(oracle, Va, Vb);
  for (std::size_t i = 0; i < S.size(); ++i) EXPECT_NEAR(S.data()[i], expect.data()[i], 1e-12);
}

TEST(Affinity, ChannelMismatchIsDimensionError) {
  auto p = vanilla_with(Tensor::eye(3));
  Rng rng(1);
  EXPECT_THROW(compute_affinity(p, random_map(rng, 2, 2, 2), random_map(rng, 2, 2, 2)), DimensionError);
  EXPECT_THROW(compute_affinity(p, random_map(rng, 2, 2, 3), random_map(rng, 2, 3, 3)), DimensionError);
}

TEST(Normalize, ZerosGiveQuarter) {
  auto pair = normalize_affinity(Tensor::zeros({4, 4}));
  for (double v : pair.S_c.data()) EXPECT_EQ(v, 0.25);
  for (double v : pair.S_r.data()) EXPECT_EQ(v, 0.25);
}

TEST(Normalize, DominantEntrySaturates) {
  std::vector<double> s(16, 0.0);
  s[2 * 4 + 1] = 20.0;  // column 1, row 2
  auto pair = normalize_affinity(Tensor({4, 4}, s));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(pair.S_c.at({i, 1}), i == 2 ? 1.0 : 0.0, 1e-8);
}

TEST(Normalize, RowVersionIsColumnVersionOfTranspose) {
  Rng rng(3);
  auto S = random_normal({5, 5}, rng, 3.0);
  EXPECT_EQ(normalize_affinity(S).S_r.values(), normalize_affinity(transpose(S)).S_c.values());
}

TEST(Summary, IdentityWeightsPickColumns) {
  Rng rng(2);
  auto V = random_map(rng, 2, 2, 3);
  EXPECT_EQ(attention_summary(V, Tensor::eye(4)).values(), V.flat().values());
}

TEST(Summary, UniformColumnGivesMeanFeature) {
  Rng rng(2);
  auto V = random_map(rng, 2, 2, 3);
  auto Z = attention_summary(V, Tensor::full({4, 4}, 0.25));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t j = 0; j < 4; ++j) m += V.tensor().data()[j * 3 + c] / 4.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(Z.at({c, i}), m, 1e-15);
  }
}

TEST(Summary, MatchesBruteForceSum) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto V = random_map(rng, 1, 2, 3);
    auto S = softmax_columns(random_normal({2, 2}, rng, 2.0));
    auto Z = attention_summary(V, S);
    auto oracle = summary_oracle(V, S);
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(Z.data()[i], oracle[i], 1e-12);
  }
}

TEST(Summary, ReferencePermutationInvariance) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = CoattentionParams::init(Variant::Vanilla, 3, rng);
    auto Vq = random_map(rng, 2, 3, 3), Vr = random_map(rng, 2, 3, 3);
    auto Z = attention_summary(Vr, softmax_columns(compute_affinity(p, Vq, Vr)));

    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 5; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
    std::vector<double> permuted(18);
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t c = 0; c < 3; ++c) permuted[j * 3 + c] = Vr.tensor().data()[perm[j] * 3 + c];
    FeatureMap Vp(Tensor({2, 3, 3}, permuted));
    auto Zp = attention_summary(Vp, softmax_columns(compute_affinity(p, Vq, Vp)));
    for (std::size_t i = 0; i < Z.size(); ++i) EXPECT_NEAR(Z.data()[i], Zp.data()[i], 1e-12);
  }
}

TEST(Gate, ZeroParamsGiveHalf) {
  Rng rng(1);
  auto p = CoattentionParams::init(Variant::Vanilla, 3, rng);
  p.gate_kernel = Tensor::zeros({1, 1, 3, 1});
  auto g = gate(p, random_normal({3, 5}, rng, 1.0));
  for (double v : g.data()) EXPECT_EQ(v, 0.5);
}

TEST(Gate, LargeBiasSaturates) {
  Rng rng(1);
  auto p = CoattentionParams::init(Variant::Vanilla, 3, rng);
  p.gate_kernel = Tensor::zeros({1, 1, 3, 1});
  p.gate_bias = Tensor({1}, {20.0});
  const auto g = gate(p, random_normal({3, 5}, rng, 1.0));
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(Gate, MatchesPerPositionDotProduct) {
  Rng rng(5);
  auto p = CoattentionParams::init(Variant::Vanilla, 4, rng);
  p.gate_bias = Tensor({1}, {0.3});
  auto Z = random_normal({4, 7}, rng, 1.0);
  auto g = gate(p, Z);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.3;
    for (std::size_t c = 0; c < 4; ++c) s += p.gate_kernel.data()[c] * Z.at({c, i});
    EXPECT_NEAR(g.data()[i], 1.0 / (1.0 + std::exp(-s)), 1e-12);
    EXPECT_GT(g.data()[i], 0.0);
    EXPECT_LT(g.data()[i], 1.0);
  }
}

TEST(ApplyGate, OnesZerosAndHalves) {
  Rng rng(2);
  auto Z = random_normal({3, 4}, rng, 1.0);
  EXPECT_EQ(apply_gate(Z, Tensor::full({4}, 1.0)).Z.values(), Z.values());
  const auto closed = apply_gate(Z, Tensor::zeros({4})).Z;
  for (double v : closed.data()) EXPECT_EQ(v, 0.0);
  auto half = apply_gate(Z, Tensor::full({4}, 0.5)).Z;
  for (std::size_t i = 0; i < Z.size(); ++i) EXPECT_EQ(half.data()[i], Z.data()[i] / 2.0);
}

TEST(ApplyGate, ScalesWholeColumn) {
  Tensor Z({2, 2}, {1, 2, 3, 4});
  auto out = apply_gate(Z, Tensor({2}, {0.5, 2.0})).Z;
  EXPECT_EQ(out.values(), (std::vector<double>{0.5, 4, 1.5, 8}));
  EXPECT_THROW(apply_gate(Z, Tensor({3}, {1, 1, 1})), DimensionError);
}

TEST(Fuse, SingleSummaryIsReturnedBitwise) {
  Rng rng(3);
  AttentionSummary s{random_normal({3, 4}, rng, 1.0), random_uniform({4}, rng, 0, 1)};
  std::vector<AttentionSummary> one{s};
  EXPECT_EQ(fuse_summaries(one).Z.values(), s.Z.values());
}

TEST(Fuse, OppositeSummariesCancel) {
  Rng rng(3);
  auto Z = random_normal({3, 4}, rng, 1.0);
  auto g = Tensor::full({4}, 0.7);
  std::vector<AttentionSummary> two{{Z, g}, {scale(Z, -1.0), g}};
  const auto fused = fuse_summaries(two).Z;
  for (double v : fused.data()) EXPECT_EQ(v, 0.0);
}

TEST(Fuse, ThreeSummariesMatchLoopAverage) {
  Rng rng(4);
  std::vector<AttentionSummary> three;
  for (int n = 0; n < 3; ++n) three.push_back({random_normal({2, 5}, rng, 1.0), random_uniform({5}, rng, 0, 1)});
  auto fused = fuse_summaries(three).Z;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    double s = 0;
    for (const auto& t : three) s += t.Z.data()[i];
    EXPECT_NEAR(fused.data()[i], s / 3.0, 1e-12);
  }
}

TEST(Fuse, EmptyListIsUsageError) {
  EXPECT_THROW(fuse_summaries(std::span<const AttentionSummary>{}), UsageError);
}

TEST(Concat, ShapesLayoutAndZeroFeatures) {
  Rng rng(6);
  FeatureMap V(Tensor::zeros({12, 12, 64}));
  AttentionSummary s{random_normal({64, 144}, rng, 1.0), Tensor::full({144}, 1.0)};
  auto X = concat_features(s, V);
  ASSERT_EQ(X.shape(), (Shape{12, 12, 128}));
  for (std::size_t p = 0; p < 144; ++p) {
    for (std::size_t c = 0; c < 64; ++c) {
      EXPECT_EQ(X.data()[p * 128 + c], s.Z.at({c, p}));
      EXPECT_EQ(X.data()[p * 128 + 64 + c], 0.0);
    }
  }
  EXPECT_THROW(concat_features(s, FeatureMap(Tensor::zeros({12, 11, 64}))), DimensionError);
}

TEST(Ortho, IdentityAndPermutationsAreZero) {
  Rng rng(1);
  auto p = CoattentionParams::init(Variant::Symmetric, 3, rng, ChannelMode::SE, 1.0);
  p.weight = Tensor::eye(3);
  EXPECT_EQ(ortho_penalty(p).item(), 0.0);
  p.weight = Tensor({3, 3}, {0, 1, 0, 0, 0, 1, 1, 0, 0});
  EXPECT_EQ(ortho_penalty(p).item(), 0.0);
}

TEST(Ortho, TwiceIdentity) {
  Rng rng(1);
  auto p = CoattentionParams::init(Variant::Symmetric, 2, rng, ChannelMode::SE, 1.0);
  p.weight = Tensor({2, 2}, {2, 0, 0, 2});
  EXPECT_EQ(ortho_penalty(p).item(), 6.0);
}

TEST(Ortho, OnlyForSymmetric) {
  Rng rng(1);
  EXPECT_THROW(ortho_penalty(CoattentionParams::init(Variant::Vanilla, 2, rng)), UsageError);
  EXPECT_THROW(ortho_penalty(CoattentionParams::init(Variant::ChannelWise, 2, rng)), UsageError);
}

TEST(Properties, SwapEquivarianceUnderSymmetricWeights) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = CoattentionParams::init(Variant::Symmetric, 4, rng);
    auto A = random_normal({4, 4}, rng, 1.0);
    p.weight = scale(add(A, transpose(A)), 0.5);
    auto Va = random_map(rng, 2, 3, 4), Vb = random_map(rng, 2, 3, 4);
    auto S = compute_affinity(p, Va, Vb);
    auto S_swapped = compute_affinity(p, Vb, Va);
    auto St = transpose(S);
    for (std::size_t i = 0; i < S.size(); ++i) EXPECT_NEAR(S_swapped.data()[i], St.data()[i], 1e-12);
    auto fwd = normalize_affinity(S), bwd = normalize_affinity(S_swapped);
    auto Za = attention_summary(Vb, fwd.S_c), Zb = attention_summary(Va, fwd.S_r);
    auto Za2 = attention_summary(Va, bwd.S_c), Zb2 = attention_summary(Vb, bwd.S_r);
    for (std::size_t i = 0; i < Za.size(); ++i) {
      EXPECT_NEAR(Za.data()[i], Zb2.data()[i], 1e-12);
      EXPECT_NEAR(Zb.data()[i], Za2.data()[i], 1e-12);
    }
  }
}

TEST(Properties, SummariesStayInConvexHull) {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = CoattentionParams::init(Variant::Vanilla, 3, rng);
    auto Vq = random_map(rng, 3, 3, 3), Vr = random_map(rng, 3, 3, 3);
    auto Z = attention_summary(Vr, softmax_columns(compute_affinity(p, Vq, Vr)));
    for (std::size_t c = 0; c < 3; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t j = 0; j < 9; ++j) {
        lo = std::min(lo, Vr.tensor().data()[j * 3 + c]);
        hi = std::max(hi, Vr.tensor().data()[j * 3 + c]);
      }
      for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_GE(Z.at({c, i}), lo - 1e-12);
        EXPECT_LE(Z.at({c, i}), hi + 1e-12);
      }
    }
  }
}

TEST(Params, InitialWeightIsNearIdentity) {
  Rng rng(3);
  auto p = CoattentionParams::init(Variant::Symmetric, 8, rng);
  ASSERT_EQ(p.weight.shape(), (Shape{8, 8}));
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(p.weight.at({i, j}), i == j ? 1.0 : 0.0, 0.01);
  EXPECT_EQ(p.gate_bias.item(), 0.0);
  EXPECT_EQ(p.ortho_lambda, 1e-4);
  EXPECT_EQ(CoattentionParams::init(Variant::Vanilla, 8, rng).ortho_lambda, 0.0);
}
