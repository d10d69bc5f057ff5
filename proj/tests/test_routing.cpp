#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moelab/error.hpp"
#include "moelab/rng.hpp"
#include "moelab/routing.hpp"
#include "moelab/verify/oracles.hpp"

namespace moelab {
namespace {

ScoreMatrix random_scores(Rng& rng, std::size_t t, std::size_t n) {
  Matrix logits(t, n);
  for (double& v : logits.data()) v = rng.uniform(-3.0, 3.0);
  return softmax_scores(logits);
}

std::vector<std::size_t> flat_selection(const RoutingMask& m) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < m.tokens(); ++t) {
    for (std::size_t e : m.experts_for(t)) out.push_back(t * m.experts() + e);
  }
  return out;
}

TEST(Softmax, ZeroLogitsAreUniform) {
  const auto s = softmax_scores(Matrix{{0.0, 0.0, 0.0}});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s(0, i), 1.0 / 3.0);
}

TEST(Softmax, ShiftInvariantOneTwoOne) {
  for (double c : {-50.0, 0.0, 3.7, 400.0}) {
    const auto s = softmax_scores(Matrix{{c, c + std::log(2.0), c}});
    EXPECT_NEAR(s(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(s(0, 1), 0.5, 1e-15);
    EXPECT_NEAR(s(0, 2), 0.25, 1e-15);
  }
}

TEST(Softmax, LargeLogitMatchesHighPrecision) {
  const std::vector<double> logits{1000.0, 0.0, 0.0};
  const auto s = softmax(logits);
  const auto ref = oracle::softmax_long_double(logits);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isfinite(s[i]));
    EXPECT_NEAR(s[i], static_cast<double>(ref[i]), 1e-300);
  }
  EXPECT_EQ(s[0], 1.0);
}

TEST(Softmax, AgreesWithLongDoubleOnRandomRows) {
  Rng rng(3);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> z(1 + rng.below(12));
    for (double& v : z) v = rng.uniform(-30.0, 30.0);
    const auto s = softmax(z);
    const auto ref = oracle::softmax_long_double(z);
    for (std::size_t i = 0; i < z.size(); ++i) {
      EXPECT_NEAR(s[i], static_cast<double>(ref[i]), 1e-15);
    }
  }
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax_scores(Matrix{{0.0, NAN}}), InvalidInput);
  EXPECT_THROW(softmax_scores(Matrix{{INFINITY, 0.0}}), InvalidInput);
}

TEST(ScoreMatrixTest, ValidatesRows) {
  EXPECT_NO_THROW(ScoreMatrix::from_rows({{0.5, 0.5}}));
  EXPECT_THROW(ScoreMatrix::from_rows({{0.5, 0.6}}), InvalidInput);
  EXPECT_THROW(ScoreMatrix::from_rows({{1.2, -0.2}}), InvalidInput);
  EXPECT_THROW(ScoreMatrix::from_rows({}), InvalidInput);
  EXPECT_NO_THROW(ScoreMatrix::from_rows({{0.5 + 5e-7, 0.5}}));
}

TEST(BudgetConfigTest, DefaultsAndValidation) {
  EXPECT_EQ(BudgetConfig::with_defaults(2, 8), (BudgetConfig{2, 1, 4}));
  EXPECT_EQ(BudgetConfig::with_defaults(3, 4), (BudgetConfig{3, 1, 4}));
  EXPECT_NO_THROW((BudgetConfig{2, 1, 4}.validate(8)));
  EXPECT_THROW((BudgetConfig{2, 0, 4}.validate(8)), BudgetInfeasible);
  EXPECT_THROW((BudgetConfig{2, 3, 4}.validate(8)), BudgetInfeasible);
  EXPECT_THROW((BudgetConfig{5, 1, 4}.validate(8)), BudgetInfeasible);
  EXPECT_THROW((BudgetConfig{2, 1, 9}.validate(8)), BudgetInfeasible);
  EXPECT_EQ((BudgetConfig{2, 1, 4}.sequence_budget(3)), 6u);
}

TEST(TopK, SortsOneRow) {
  const auto m = topk_route(ScoreMatrix::from_rows({{0.1, 0.6, 0.3}}), 2);
  EXPECT_EQ(m.experts_for(0), (std::vector<std::size_t>{1, 2}));
  EXPECT_DOUBLE_EQ(m.gate(0, 1), 0.6);
  EXPECT_DOUBLE_EQ(m.gate(0, 0), 0.0);
}

TEST(TopK, FullSelection) {
  Rng rng(1);
  const auto s = random_scores(rng, 5, 4);
  const auto m = topk_route(s, 4);
  EXPECT_EQ(m.total(), 20u);
  for (auto c : m.counts()) EXPECT_EQ(c, 4u);
}

TEST(TopK, TieGoesToLowerIndex) {
  const auto m = topk_route(ScoreMatrix::from_rows({{0.4, 0.4, 0.2}}), 1);
  EXPECT_EQ(m.experts_for(0), (std::vector<std::size_t>{0}));
}

TEST(TopK, RejectsBadK) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.5}});
  EXPECT_THROW(topk_route(s, 0), BudgetInfeasible);
  EXPECT_THROW(topk_route(s, 3), BudgetInfeasible);
}

TEST(SeqTopK, SingleRowIsTopK) {
  Rng rng(2);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 1 + rng.below(10);
    const auto s = random_scores(rng, 1, n);
    const std::size_t k = 1 + rng.below(n);
    EXPECT_TRUE(seqtopk_route_unbounded(s, k).same_selection(topk_route(s, k)));
  }
}

TEST(SeqTopK, TokenMayReceiveNothing) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.34, 0.33, 0.33}});
  const auto m = seqtopk_route_unbounded(s, 1);
  EXPECT_EQ(m.experts_for(0), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(m.experts_for(1).empty());
  EXPECT_EQ(m.total(), 2u);
}

TEST(SeqTopK, BudgetIsTokensTimesK) {
  Rng rng(4);
  const auto s = random_scores(rng, 3, 5);
  EXPECT_EQ(seqtopk_route_unbounded(s, 2).total(), 6u);
  EXPECT_EQ(seqtopk_route_bounded(s, BudgetConfig::with_defaults(2, 5)).total(), 6u);
}

TEST(SeqTopK, MatchesReferenceRanking) {
  Rng rng(5);
  for (int c = 0; c < 300; ++c) {
    const std::size_t t = 1 + rng.below(12), n = 1 + rng.below(9);
    const std::size_t k = 1 + rng.below(n);
    const auto s = random_scores(rng, t, n);
    EXPECT_EQ(flat_selection(seqtopk_route_unbounded(s, k)),
              oracle::reference_top_set(s.values().data(), t * k));
  }
}

TEST(SeqTopKBounded, LowerBoundForcesSecondToken) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.34, 0.33, 0.33}});
  const auto m = seqtopk_route_bounded(s, BudgetConfig{1, 1, 3});
  EXPECT_EQ(m.experts_for(0), (std::vector<std::size_t>{0}));
  EXPECT_EQ(m.experts_for(1), (std::vector<std::size_t>{0}));
}

TEST(SeqTopKBounded, UniformScoresFillLowIndices) {
  Matrix u(4, 6, 1.0 / 6.0);
  const auto m = seqtopk_route_bounded(ScoreMatrix(u), BudgetConfig{2, 2, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(m.experts_for(t), (std::vector<std::size_t>{0, 1}));
  }
}

// With slack above k the tie chain fills earlier tokens up to the cap first.
TEST(SeqTopKBounded, UniformScoresWithSlackFillTokenMajor) {
  Matrix u(4, 6, 1.0 / 6.0);
  const auto m = seqtopk_route_bounded(ScoreMatrix(u), BudgetConfig{2, 1, 4});
  EXPECT_EQ(m.counts(), (std::vector<std::size_t>{4, 2, 1, 1}));
  EXPECT_EQ(m.experts_for(1), (std::vector<std::size_t>{0, 1}));
}

TEST(SeqTopKBounded, CollapsedBoundsEqualTopK) {
  Rng rng(6);
  for (int c = 0; c < 100; ++c) {
    const std::size_t t = 1 + rng.below(10), n = 1 + rng.below(8);
    const std::size_t k = 1 + rng.below(n);
    const auto s = random_scores(rng, t, n);
    EXPECT_TRUE(seqtopk_route_bounded(s, BudgetConfig{k, k, k}).same_selection(topk_route(s, k)));
  }
}

TEST(SeqTopKBounded, MatchesBruteForceAndBounds) {
  Rng rng(7);
  for (int c = 0; c < 300; ++c) {
    const std::size_t t = 1 + rng.below(3), n = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 2));
    const std::size_t lo = 1 + rng.below(k);
    const std::size_t hi = k + rng.below(n - k + 1);
    const BudgetConfig b{k, lo, hi};
    const auto s = random_scores(rng, t, n);
    const auto m = seqtopk_route_bounded(s, b);
    double got = 0.0;
    for (double g : m.gate_weights().data()) got += g;
    EXPECT_NEAR(got, *oracle::brute_force_bounded_best(s, b), 1e-12);
    for (auto cnt : m.counts()) {
      EXPECT_GE(cnt, lo);
      EXPECT_LE(cnt, hi);
    }
  }
}

TEST(SeqTopKBounded, InfeasibleBudgetThrows) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.5}});
  EXPECT_THROW(seqtopk_route_bounded(s, BudgetConfig{2, 1, 3}), BudgetInfeasible);
  EXPECT_THROW(seqtopk_route_bounded(s, BudgetConfig{1, 2, 2}), BudgetInfeasible);
}

TEST(BatchTopK, SingleSequenceIsSeqTopK) {
  Rng rng(8);
  const std::vector<ScoreMatrix> batch{random_scores(rng, 6, 5)};
  EXPECT_TRUE(batchtopk_route(batch, 2)[0].same_selection(seqtopk_route_unbounded(batch[0], 2)));
}

TEST(BatchTopK, IdenticalSequencesSplitEvenly) {
  Rng rng(9);
  const auto s = random_scores(rng, 4, 6);
  const std::vector<ScoreMatrix> batch{s, s};
  const auto masks = batchtopk_route(batch, 2);
  EXPECT_EQ(masks[0].total(), 8u);
  EXPECT_EQ(masks[1].total(), 8u);
  EXPECT_TRUE(masks[0].same_selection(masks[1]));
}

TEST(BatchTopK, DominantSequenceTakesEverything) {
  const std::vector<ScoreMatrix> batch{
      ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.5, 0.45, 0.05}}),
      ScoreMatrix::from_rows({{0.34, 0.33, 0.33}, {0.34, 0.33, 0.33}})};
  const auto masks = batchtopk_route(batch, 1);
  EXPECT_EQ(masks[0].total(), 4u);
  EXPECT_EQ(masks[1].total(), 0u);
}

TEST(BatchTopK, MixedExpertCountsRejected) {
  const std::vector<ScoreMatrix> batch{ScoreMatrix::from_rows({{0.5, 0.5}}),
                                       ScoreMatrix::from_rows({{1.0, 0.0, 0.0}})};
  EXPECT_THROW(batchtopk_route(batch, 1), InvalidInput);
}

TEST(RoutingMaskTest, GatesAndCountsConsistent) {
  Rng rng(10);
  for (int c = 0; c < 100; ++c) {
    const std::size_t t = 1 + rng.below(8), n = 1 + rng.below(8);
    const auto s = random_scores(rng, t, n);
    const auto m = seqtopk_route_bounded(s, BudgetConfig::with_defaults(1 + rng.below(n), n));
    std::size_t total = 0;
    for (std::size_t i = 0; i < t; ++i) {
      std::size_t row = 0;
      for (std::size_t e = 0; e < n; ++e) {
        row += m.selected(i, e);
        EXPECT_EQ(m.gate(i, e), m.selected(i, e) ? s(i, e) : 0.0);
      }
      EXPECT_EQ(m.counts()[i], row);
      total += row;
    }
    EXPECT_EQ(m.total(), total);
  }
}

TEST(RoutingMaskTest, RenormalizedGatesSumToOne) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.34, 0.33, 0.33}});
  const auto m = seqtopk_route_unbounded(s, 1).renormalized();
  EXPECT_NEAR(m.gate(0, 0) + m.gate(0, 1), 1.0, 1e-15);
  EXPECT_EQ(m.gate(1, 0), 0.0);
}

// Permuting experts permutes the selection when no scores tie.
TEST(RoutingProperties, ExpertPermutationEquivariance) {
  Rng rng(11);
  for (int c = 0; c < 100; ++c) {
    const std::size_t t = 1 + rng.below(6), n = 2 + rng.below(6);
    const std::size_t k = 1 + rng.below(n);
    const auto s = random_scores(rng, t, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Matrix p(t, n);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t e = 0; e < n; ++e) p(i, perm[e]) = s(i, e);
    }
    const ScoreMatrix ps(p);
    const auto b = BudgetConfig::with_defaults(k, n);
    const auto a1 = seqtopk_route_bounded(s, b), a2 = seqtopk_route_bounded(ps, b);
    const auto u1 = seqtopk_route_unbounded(s, k), u2 = seqtopk_route_unbounded(ps, k);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t e = 0; e < n; ++e) {
        EXPECT_EQ(a1.selected(i, e), a2.selected(i, perm[e]));
        EXPECT_EQ(u1.selected(i, e), u2.selected(i, perm[e]));
      }
    }
  }
}

TEST(RoutingProperties, BoundedScoreMonotoneInUpperBound) {
  Rng rng(12);
  for (int c = 0; c < 100; ++c) {
    const std::size_t t = 1 + rng.below(8), n = 2 + rng.below(7);
    const std::size_t k = 1 + rng.below(n - 1);
    const auto s = random_scores(rng, t, n);
    double prev = -1.0;
    for (std::size_t hi = k; hi <= n; ++hi) {
      const auto m = seqtopk_route_bounded(s, BudgetConfig{k, 1, hi});
      double mass = 0.0;
      for (double g : m.gate_weights().data()) mass += g;
      EXPECT_GE(mass, prev - 1e-15);
      prev = mass;
    }
    const auto u = seqtopk_route_unbounded(s, k);
    double unbounded = 0.0;
    for (double g : u.gate_weights().data()) unbounded += g;
    EXPECT_GE(unbounded, prev - 1e-15);
  }
}

TEST(RoutingProperties, Deterministic) {
  Rng rng(13);
  const auto s = random_scores(rng, 16, 8);
  const auto b = BudgetConfig::with_defaults(2, 8);
  EXPECT_EQ(seqtopk_route_bounded(s, b), seqtopk_route_bounded(s, b));
}

TEST(StrategyNames, RoundTrip) {
  for (Strategy s : {Strategy::kTopK, Strategy::kSeqTopK, Strategy::kSeqTopKBounded,
                     Strategy::kBatchTopK, Strategy::kOnlineSeqTopK}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
  EXPECT_EQ(parse_strategy("seqtopk_bounded"), Strategy::kSeqTopKBounded);
  EXPECT_FALSE(parse_strategy("greedy").has_value());
}

}  // namespace
}  // namespace moelab
