#include <gtest/gtest.h>

#include "cosnet/metrics.hpp"

using namespace cosnet;

TEST(Jaccard, IdenticalDisjointHalf) {
  Mask a{1, 1, 0, 0}, b{0, 0, 1, 1}, full{1, 1, 1, 1};
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard(a, b), 0.0);
  EXPECT_EQ(jaccard(a, full), 0.5);
}

TEST(Jaccard, LeftHalfOfFrame) {
  Mask left(8 * 8, 0), full(8 * 8, 1);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x) left[y * 8 + x] = 1;
  EXPECT_EQ(jaccard(left, full), 0.5);
}

TEST(Jaccard, BothEmptyIsOne) {
  Mask e(9, 0);
  EXPECT_EQ(jaccard(e, e), 1.0);
}

TEST(Jaccard, SymmetricAndSizeChecked) {
  Mask a{1, 0, 1, 1, 0}, b{1, 1, 0, 1, 0};
  EXPECT_EQ(jaccard(a, b), jaccard(b, a));
  EXPECT_EQ(jaccard(a, b), 2.0 / 4.0);
  EXPECT_THROW(jaccard(a, Mask{1}), DimensionError);
}

TEST(Score, AllPerfect) {
  auto s = score_from_j({1, 1, 1, 1, 1});
  EXPECT_EQ(s.mean_j, 1.0);
  EXPECT_EQ(s.recall_j, 1.0);
  EXPECT_EQ(s.decay_j, 0.0);
}

TEST(Score, HandComputedQuartiles) {
  auto s = score_from_j({1, 1, 0, 0});
  EXPECT_EQ(s.mean_j, 0.5);
  EXPECT_EQ(s.recall_j, 0.5);
  EXPECT_EQ(s.decay_j, 1.0);
}

TEST(Score, QuartilesUseFloorDivision) {
  // n=9: quartile length 2, frames {0,1} vs {7,8}.
  auto s = score_from_j({0.9, 0.7, 0.5, 0.5, 0.5, 0.5, 0.5, 0.3, 0.1});
  EXPECT_NEAR(s.decay_j, (0.9 + 0.7 - 0.3 - 0.1) / 2.0, 1e-15);
  EXPECT_NEAR(s.recall_j, 2.0 / 9.0, 1e-15);
}

TEST(Score, ConstantSequenceHasNoDecay) {
  EXPECT_EQ(score_from_j(std::vector<double>(12, 0.37)).decay_j, 0.0);
}

TEST(Score, MeanInvariantUnderReorderDecayIsNot) {
  auto a = score_from_j({1, 0.5, 0.25, 0});
  auto b = score_from_j({0, 0.25, 0.5, 1});
  EXPECT_EQ(a.mean_j, b.mean_j);
  EXPECT_EQ(a.decay_j, -b.decay_j);
}

TEST(Score, RecallThresholdIsStrict) {
  EXPECT_EQ(score_from_j({0.5, 0.5, 0.5, 0.51}).recall_j, 0.25);
}

TEST(Score, Errors) {
  EXPECT_THROW(score_from_j({1, 1, 1}), UsageError);
  std::vector<Mask> p(4, Mask{1}), g(5, Mask{1});
  EXPECT_THROW(score_sequence(p, g), DimensionError);
}

TEST(Score, FromMasks) {
  std::vector<Mask> gt(4, Mask{1, 1, 0, 0});
  std::vector<Mask> pred{gt[0], gt[0], Mask{0, 0, 1, 1}, Mask{0, 0, 1, 1}};
  auto s = score_sequence(pred, gt, "seq");
  EXPECT_EQ(s.name, "seq");
  EXPECT_EQ(s.per_frame_j, (std::vector<double>{1, 1, 0, 0}));
  EXPECT_EQ(s.decay_j, 1.0);
  auto j = to_json(s);
  EXPECT_EQ(j["mean_j"], 0.5);
}

TEST(Score, MeanOverSequences) {
  std::vector<SequenceScore> s{score_from_j({1, 1, 1, 1}), score_from_j({0, 0, 0, 0})};
  EXPECT_EQ(mean_over_sequences(s), 0.5);
}
