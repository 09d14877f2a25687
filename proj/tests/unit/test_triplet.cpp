#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "specklenn/triplet.hpp"
#include "support/gradcheck.hpp"
#include "support/mining_oracle.hpp"

using namespace specklenn;
namespace st = specklenn::testing;
using st::brute_force;
using st::Key;
using st::Oracle;
using st::unit_rows;

TEST(Difficulty, BoundariesFollowDefinition) {
  EXPECT_EQ(classify_triplet_difficulty(1.0, 1.0, 0.5), Difficulty::hard);
  EXPECT_EQ(classify_triplet_difficulty(1.0, 0.9, 0.5), Difficulty::hard);
  EXPECT_EQ(classify_triplet_difficulty(1.0, 1.2, 0.5), Difficulty::semi_hard);
  EXPECT_EQ(classify_triplet_difficulty(1.0, 1.5, 0.5), Difficulty::easy);
  EXPECT_EQ(classify_triplet_difficulty(1.0, 2.0, 0.5), Difficulty::easy);
}

TEST(Difficulty, MarginOutsideRangeRejected) {
  EXPECT_THROW(validate_margin(0.0), std::invalid_argument);
  EXPECT_THROW(validate_margin(4.5), std::invalid_argument);
  EXPECT_NO_THROW(validate_margin(4.0));
}

TEST(Mining, MatchesBruteForceOnRandomBatches) {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t B = 4 + rng() % 20, D = 2 + rng() % 6;
    const int classes = 2 + static_cast<int>(rng() % 3), samples = 1 + static_cast<int>(rng() % 3);
    const double alpha = 0.1 + 0.2 * static_cast<double>(rng() % 10);
    const Tensor<float> e = unit_rows(B, D, rng);
    std::vector<int> labels(B), ids(B);
    for (std::size_t i = 0; i < B; ++i) {
      labels[i] = static_cast<int>(rng() % classes);
      ids[i] = static_cast<int>(rng() % samples);
    }
    const Oracle o = brute_force(e, labels, ids, alpha);
    Rng mine_rng(1);
    const MiningResult r = mine_semi_hard(e, std::span<const int>(labels), std::span<const int>(ids), alpha, mine_rng);
    std::set<Key> got;
    for (const Triplet& t : r.triplets) {
      got.insert({t.anchor, t.positive, t.negative});
      EXPECT_EQ(t.label, labels[t.anchor]);
      EXPECT_EQ(t.sample, ids[t.anchor]);
      EXPECT_EQ(t.negative_label, labels[t.negative]);
      EXPECT_EQ(t.negative_sample, ids[t.negative]);
    }
    EXPECT_EQ(got.size(), r.triplets.size()) << "duplicates in trial " << trial;
    EXPECT_EQ(got, o.semi_hard) << "trial " << trial;
    EXPECT_EQ(r.candidates, o.counts) << "trial " << trial;
    EXPECT_EQ(r.positive_pairs, o.pairs);
  }
}

TEST(Mining, NegativesMayComeFromOtherSamples) {
  // Two points of sample 0 and a negative of sample 1 sitting inside the margin band.
  Tensor<float> e(Shape{3, 2}, {1.0f, 0.0f, 0.8f, 0.6f, 0.6f, 0.8f});
  std::vector<int> labels{0, 0, 1}, ids{0, 0, 1};
  Rng rng(0);
  const MiningResult r = mine_semi_hard(e, std::span<const int>(labels), std::span<const int>(ids), 0.5, rng);
  ASSERT_EQ(r.diagnostic, MiningDiagnostic::ok);
  // From anchor 0: d_ap = 0.4, d_an = 0.8. From anchor 1 the negative is closer than the positive.
  ASSERT_EQ(r.triplets.size(), 1u);
  EXPECT_EQ(r.triplets[0], (Triplet{0, 1, 2, 0, 0, 1, 1}));
  EXPECT_EQ(r.candidates.hard, 1u);
}

TEST(Mining, PositivesNeverCrossSamples) {
  Rng rng(5);
  const Tensor<float> e = unit_rows(4, 3, rng);
  std::vector<int> labels{0, 0, 1, 1}, ids{0, 1, 0, 1};
  const MiningResult r = mine_semi_hard(e, std::span<const int>(labels), std::span<const int>(ids), 1.0, rng);
  EXPECT_EQ(r.positive_pairs, 0u);
  EXPECT_TRUE(r.triplets.empty());
  EXPECT_EQ(r.diagnostic, MiningDiagnostic::no_positive_pairs);
}

TEST(Mining, DiagnosticsForDegenerateBatches) {
  Rng rng(1);
  const Tensor<float> e = unit_rows(4, 3, rng);
  std::vector<int> one_class{0, 0, 0, 0}, ids{0, 0, 0, 0};
  EXPECT_EQ(mine_semi_hard(e, std::span<const int>(one_class), std::span<const int>(ids), 0.5, rng).diagnostic,
            MiningDiagnostic::no_negatives);
  // Collapsed embeddings: every candidate has d_an = d_ap = 0, so all are hard.
  Tensor<float> same(Shape{4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  std::vector<int> labels{0, 0, 1, 1};
  const MiningResult r = mine_semi_hard(same, std::span<const int>(labels), std::span<const int>(ids), 0.5, rng);
  EXPECT_EQ(r.diagnostic, MiningDiagnostic::no_semi_hard);
  EXPECT_EQ(r.candidates.hard, 8u);
  Tensor<float> none(Shape{0, 2});
  std::vector<int> empty;
  EXPECT_EQ(mine_semi_hard(none, std::span<const int>(empty), std::span<const int>(empty), 0.5, rng).diagnostic,
            MiningDiagnostic::no_positive_pairs);
}

TEST(Mining, CappedDrawIsSubsetWithoutRepeats) {
  Rng rng(3);
  const Tensor<float> e = unit_rows(24, 4, rng);
  std::vector<int> labels(24), ids(24, 0);
  for (std::size_t i = 0; i < 24; ++i) labels[i] = static_cast<int>(i % 3);
  Rng r1(9), r2(9);
  const MiningResult all = mine_semi_hard(e, std::span<const int>(labels), std::span<const int>(ids), 2.0, r1);
  ASSERT_GT(all.triplets.size(), 20u);
  const MiningResult some = mine_semi_hard(e, std::span<const int>(labels), std::span<const int>(ids), 2.0, r2, 20);
  ASSERT_EQ(some.triplets.size(), 20u);
  std::set<Key> full, sub;
  for (const auto& t : all.triplets) full.insert({t.anchor, t.positive, t.negative});
  for (const auto& t : some.triplets) sub.insert({t.anchor, t.positive, t.negative});
  EXPECT_EQ(sub.size(), 20u);
  EXPECT_TRUE(std::includes(full.begin(), full.end(), sub.begin(), sub.end()));
  EXPECT_EQ(some.candidates, all.candidates);
}

TEST(Mining, RejectsMismatchedMetadata) {
  Rng rng(0);
  const Tensor<float> e = unit_rows(3, 2, rng);
  std::vector<int> two{0, 1}, three{0, 1, 0};
  EXPECT_THROW(mine_semi_hard(e, std::span<const int>(two), std::span<const int>(three), 0.5, rng), ShapeError);
}

TEST(TripletLossTest, IdentitiesOnHandPickedRows) {
  Graph<float> g;
  // Row 0: a = p = n, loss = alpha. Row 1: a = p, n antipodal, inactive. Row 2: d_ap = 2, d_an = 0.
  Var a = g.input(Tensor<float>(Shape{3, 2}, {1, 0, 1, 0, 1, 0}));
  Var p = g.input(Tensor<float>(Shape{3, 2}, {1, 0, 1, 0, 0, 1}));
  Var n = g.input(Tensor<float>(Shape{3, 2}, {1, 0, -1, 0, 1, 0}));
  const TripletLoss l = triplet_loss(g, a, p, n, 0.5);
  EXPECT_EQ(l.count, 3u);
  EXPECT_EQ(l.active, 2u);
  EXPECT_FALSE(l.empty);
  EXPECT_DOUBLE_EQ(g.value(l.loss)[0], 0.5 + 2.5);
}

TEST(TripletLossTest, EmptyBatchIsZeroAndFlagged) {
  Graph<float> g;
  Var z = g.input(Tensor<float>(Shape{0, 4}));
  const TripletLoss l = triplet_loss(g, z, z, z, 0.5);
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(g.value(l.loss)[0], 0.0f);
}

TEST(TripletLossTest, NonNegativeAndSumOfHinges) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor<float> A = unit_rows(6, 5, rng), P = unit_rows(6, 5, rng), N = unit_rows(6, 5, rng);
    double expect = 0;
    for (std::size_t i = 0; i < 6; ++i)
      expect += std::max(0.0, 0.3 + squared_distance(A.data() + 5 * i, P.data() + 5 * i, 5) -
                                  squared_distance(A.data() + 5 * i, N.data() + 5 * i, 5));
    Graph<float> g;
    const TripletLoss l = triplet_loss(g, g.input(A), g.input(P), g.input(N), 0.3);
    EXPECT_GE(g.value(l.loss)[0], 0.0f);
    EXPECT_NEAR(g.value(l.loss)[0], expect, 1e-5);
  }
}

TEST(TripletLossTest, IndexFormGathersRows) {
  Rng rng(4);
  const Tensor<float> e = unit_rows(5, 3, rng);
  const std::vector<Triplet> ts{{0, 1, 2}, {3, 4, 0}};
  Graph<float> g1, g2;
  const TripletLoss a = triplet_loss(g1, g1.input(e), std::span<const Triplet>(ts), 1.0);
  Tensor<float> A(Shape{2, 3}), P(Shape{2, 3}), N(Shape{2, 3});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      A[r * 3 + k] = e[ts[r].anchor * 3 + k];
      P[r * 3 + k] = e[ts[r].positive * 3 + k];
      N[r * 3 + k] = e[ts[r].negative * 3 + k];
    }
  const TripletLoss b = triplet_loss(g2, g2.input(A), g2.input(P), g2.input(N), 1.0);
  EXPECT_EQ(g1.value(a.loss)[0], g2.value(b.loss)[0]);
}

TEST(TripletLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  // Hinges far from zero keep the active set fixed under the probe step.
  Tensor<double> A = st::uniform_tensor<double>({4, 3}, rng), P = A, N = A;
  for (std::size_t i = 0; i < A.size(); ++i) {
    P[i] += 0.3 * st::uniform_tensor<double>({1}, rng)[0];
    N[i] += (i < 6 ? 0.2 : 3.0) * st::uniform_tensor<double>({1}, rng)[0];
  }
  const auto r = st::gradcheck<double>(
      {A, P, N}, [](Graph<double>& g, const std::vector<Var>& v) { return triplet_loss(g, v[0], v[1], v[2], 1.0).loss; },
      1e-6, 100);
  EXPECT_LT(r.norm_error, 1e-6);
}

TEST(TripletLossTest, ShapeMismatchRejected) {
  Graph<float> g;
  Var a = g.input(Tensor<float>(Shape{2, 3})), b = g.input(Tensor<float>(Shape{2, 4}));
  EXPECT_THROW(triplet_loss(g, a, a, b, 0.5), ShapeError);
  EXPECT_THROW(triplet_loss(g, a, a, a, 0.0), std::invalid_argument);
}
