#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/matrix.hpp"
#include "moelab/routing.hpp"
#include "moelab/task.hpp"

namespace moelab {

// Natural-log entropy with 0 log 0 = 0.
double entropy(std::span<const double> p);
// H(p) / log(E); a single-expert distribution counts as perfectly balanced.
double normalized_entropy(std::span<const double> p);

struct RoutingStats {
  std::vector<double> per_expert_load;  // p_e, sums to 1
  double entropy = 0.0;                 // nats
  double normalized_entropy = 0.0;      // in [0, 1]
  std::map<std::size_t, std::size_t> activation_histogram;
  std::size_t layer_index = 0;
};

// p_e = mean over tokens of the assignment probabilities p_{i,e}. Every row
// of every matrix must be a probability row. Throws InvalidInput on an empty
// corpus.
RoutingStats routing_entropy(std::span<const Matrix> assignment_probs,
                             std::size_t layer_index = 0);
RoutingStats routing_entropy(const Matrix& assignment_probs,
                             std::size_t layer_index = 0);

// Fraction of selected entries per expert over a set of masks.
std::vector<double> expert_load(std::span<const RoutingMask> masks);

// Experts-per-token histogram: histogram[c] = tokens with c experts.
std::map<std::size_t, std::size_t> activation_distribution(
    std::span<const RoutingMask> masks);

struct TokenEntropyRecord {
  std::size_t token = 0;
  double entropy = 0.0;  // nats, of the LM output distribution
  std::size_t activated_experts = 0;
  std::optional<Difficulty> difficulty;
};

struct EntropyBin {
  double entropy_lo = 0.0;
  double entropy_hi = 0.0;
  double mean_entropy = 0.0;
  double mean_experts = 0.0;
  std::size_t count = 0;
};

struct EntropyCorrelation {
  double pearson = 0.0;
  std::vector<EntropyBin> bins;  // entropy deciles
};

// Throws CorrelationUndefined when either variable has zero variance.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

EntropyCorrelation token_entropy_vs_experts(
    std::span<const TokenEntropyRecord> records, std::size_t n_bins = 10);

struct BatchSweepEntry {
  std::size_t batch_size = 0;
  // Per-sequence masks, in corpus order.
  std::vector<RoutingMask> masks;
  // Mean over sequences of |selected - T*k|: zero for sequence-local rules.
  double mean_budget_deviation = 0.0;
  // Mean selected score mass per token.
  double mean_gate_mass = 0.0;
  // Every mask identical to the batch-size-1 routing of the same sequence.
  bool identical_to_unbatched = false;
};

// Routes the corpus in consecutive groups of each batch size. Throws
// InvalidInput if a batch size does not divide the corpus.
std::vector<BatchSweepEntry> batch_sensitivity_sweep(
    Strategy strategy, const BudgetConfig& budget,
    std::span<const std::size_t> batch_sizes,
    std::span<const ScoreMatrix> corpus);

struct MetricReport {
  std::string metric;
  std::size_t layer = 0;
  std::string strategy;
  std::vector<double> values;
};

// {"schema":"moelab.report","version":1,"reports":[{metric,layer,strategy,values}]}
std::string reports_to_json(std::span<const MetricReport> reports);

}  // namespace moelab
