#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "moelab/analytics.hpp"
#include "moelab/error.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

TEST(RoutingEntropy, ClosedForms) {
  EXPECT_DOUBLE_EQ(routing_entropy(Matrix{{0.25, 0.25, 0.25, 0.25}}).normalized_entropy, 1.0);
  EXPECT_EQ(routing_entropy(Matrix{{0.0, 0.0, 1.0, 0.0}}).normalized_entropy, 0.0);
  EXPECT_DOUBLE_EQ(routing_entropy(Matrix{{0.5, 0.5, 0.0, 0.0}}).normalized_entropy, 0.5);
}

TEST(RoutingEntropy, AveragesOverTokensAndSequences) {
  const std::vector<Matrix> corpus{Matrix{{1.0, 0.0}}, Matrix{{0.0, 1.0}}};
  const auto stats = routing_entropy(corpus, 2);
  EXPECT_EQ(stats.per_expert_load, (std::vector<double>{0.5, 0.5}));
  EXPECT_DOUBLE_EQ(stats.normalized_entropy, 1.0);
  EXPECT_EQ(stats.layer_index, 2u);
}

TEST(RoutingEntropy, SingleExpertAndErrors) {
  EXPECT_EQ(routing_entropy(Matrix{{1.0}}).normalized_entropy, 1.0);
  EXPECT_THROW(routing_entropy(std::vector<Matrix>{}), InvalidInput);
  EXPECT_THROW(routing_entropy(Matrix{{0.7, 0.7}}), InvalidInput);
}

TEST(RoutingEntropy, FuzzStaysInUnitInterval) {
  Rng rng(1);
  for (int c = 0; c < 500; ++c) {
    const std::size_t n = 1 + rng.below(12);
    Matrix m(1 + rng.below(6), n);
    for (std::size_t t = 0; t < m.rows(); ++t) {
      std::vector<double> z(n);
      for (double& v : z) v = rng.uniform(-40.0, 40.0);
      const auto p = softmax(z);
      std::copy(p.begin(), p.end(), m.row(t).begin());
    }
    const double h = routing_entropy(m).normalized_entropy;
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
  }
}

TEST(Pearson, PerfectLine) {
  std::vector<TokenEntropyRecord> recs{{0, 1.0, 2, {}}, {1, 2.0, 4, {}}, {2, 3.0, 6, {}}};
  EXPECT_NEAR(token_entropy_vs_experts(recs).pearson, 1.0, 1e-15);
}

TEST(Pearson, DegenerateVarianceThrows) {
  std::vector<TokenEntropyRecord> recs{{0, 1.0, 2, {}}, {1, 1.0, 2, {}}, {2, 1.0, 2, {}}};
  EXPECT_THROW(token_entropy_vs_experts(recs), CorrelationUndefined);
}

TEST(Pearson, BinsCoverAllRecords) {
  Rng rng(2);
  std::vector<TokenEntropyRecord> recs;
  for (std::size_t i = 0; i < 95; ++i) recs.push_back({i, rng.uniform(), 1 + rng.below(4), {}});
  const auto corr = token_entropy_vs_experts(recs, 10);
  std::size_t total = 0;
  for (const auto& b : corr.bins) total += b.count;
  EXPECT_EQ(total, 95u);
}

TEST(ActivationDistribution, TopKSpike) {
  Rng rng(3);
  Matrix logits(100, 6);
  for (double& v : logits.data()) v = rng.uniform(-2.0, 2.0);
  const std::vector<RoutingMask> masks{topk_route(softmax_scores(logits), 2)};
  EXPECT_EQ(activation_distribution(masks), (std::map<std::size_t, std::size_t>{{2, 100}}));
}

TEST(ActivationDistribution, UnboundedCraftedScores) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.34, 0.33, 0.33}});
  const std::vector<RoutingMask> masks{seqtopk_route_unbounded(s, 1)};
  EXPECT_EQ(activation_distribution(masks), (std::map<std::size_t, std::size_t>{{0, 1}, {2, 1}}));
}

TEST(ActivationDistribution, BoundedSupportWithinBounds) {
  Rng rng(4);
  Matrix logits(64, 8);
  for (double& v : logits.data()) v = rng.uniform(-4.0, 4.0);
  const BudgetConfig b{2, 1, 4};
  const std::vector<RoutingMask> masks{seqtopk_route_bounded(softmax_scores(logits), b)};
  for (const auto& [c, n] : activation_distribution(masks)) {
    EXPECT_GE(c, 1u);
    EXPECT_LE(c, 4u);
  }
}

TEST(ExpertLoad, SumsToOne) {
  const auto s = ScoreMatrix::from_rows({{0.5, 0.3, 0.2}, {0.1, 0.1, 0.8}});
  const std::vector<RoutingMask> masks{topk_route(s, 1)};
  EXPECT_EQ(expert_load(masks), (std::vector<double>{0.5, 0.0, 0.5}));
}

std::vector<ScoreMatrix> random_corpus(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoreMatrix> corpus;
  for (int s = 0; s < 16; ++s) {
    Matrix logits(3 + rng.below(6), 5);
    for (double& v : logits.data()) v = rng.uniform(-3.0, 3.0);
    corpus.push_back(softmax_scores(logits));
  }
  return corpus;
}

TEST(BatchSweep, SequenceLocalStrategiesInvariant) {
  const auto corpus = random_corpus(5);
  const std::vector<std::size_t> sizes{1, 4, 16};
  for (Strategy s : {Strategy::kTopK, Strategy::kSeqTopK, Strategy::kSeqTopKBounded,
                     Strategy::kOnlineSeqTopK}) {
    const auto sweep = batch_sensitivity_sweep(s, BudgetConfig::with_defaults(2, 5), sizes, corpus);
    for (const auto& e : sweep) {
      EXPECT_TRUE(e.identical_to_unbatched) << to_string(s) << " B=" << e.batch_size;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        EXPECT_EQ(e.masks[i], sweep[0].masks[i]);
      }
    }
  }
}

TEST(BatchSweep, BatchTopKDiffersOnDominanceCorpus) {
  const std::vector<ScoreMatrix> corpus{
      ScoreMatrix::from_rows({{0.5, 0.45, 0.05}, {0.5, 0.45, 0.05}}),
      ScoreMatrix::from_rows({{0.34, 0.33, 0.33}, {0.34, 0.33, 0.33}})};
  const std::vector<std::size_t> sizes{1, 2};
  const auto sweep =
      batch_sensitivity_sweep(Strategy::kBatchTopK, BudgetConfig::with_defaults(1, 3), sizes, corpus);
  EXPECT_TRUE(sweep[0].identical_to_unbatched);
  EXPECT_FALSE(sweep[1].identical_to_unbatched);
  EXPECT_EQ(sweep[0].masks[1].total(), 2u);
  EXPECT_EQ(sweep[1].masks[1].total(), 0u);
  EXPECT_DOUBLE_EQ(sweep[1].mean_budget_deviation, 2.0);
}

TEST(BatchSweep, RejectsNonDividingBatch) {
  const auto corpus = random_corpus(6);
  const std::vector<std::size_t> sizes{3};
  EXPECT_THROW(batch_sensitivity_sweep(Strategy::kTopK, BudgetConfig{1, 1, 3}, sizes, corpus),
               InvalidInput);
}

TEST(Reports, JsonSchema) {
  const std::vector<MetricReport> r{{"routing_entropy", 0, "topk", {0.5}}};
  const auto j = nlohmann::json::parse(reports_to_json(r));
  EXPECT_EQ(j["schema"], "moelab.report");
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["reports"][0]["metric"], "routing_entropy");
  EXPECT_EQ(j["reports"][0]["values"][0], 0.5);
}

}  // namespace
}  // namespace moelab
