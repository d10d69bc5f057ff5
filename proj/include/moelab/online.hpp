#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moelab/routing.hpp"

namespace moelab {

// Append-only history of router probability rows and the experts each token
// actually activated. Memory is steps x N doubles per layer.
//
// A row added with append_row() is "pending" until record_activation()
// stores its realized expert set; at most one row may be pending.
class ExpertCache {
 public:
  explicit ExpertCache(std::size_t n_experts);

  std::size_t n_experts() const { return n_experts_; }
  std::size_t steps() const { return rows_.size() / n_experts_; }
  std::size_t routed_steps() const { return activated_.size(); }
  bool has_pending_row() const { return steps() > routed_steps(); }

  std::span<const double> score_row(std::size_t step) const {
    return {rows_.data() + step * n_experts_, n_experts_};
  }
  const std::vector<std::vector<std::size_t>>& activated() const {
    return activated_;
  }
  std::size_t cumulative_activations() const { return cumulative_; }

  // Cached rows as a score matrix (throws if the cache is empty).
  ScoreMatrix scores() const;

  // Throws InvalidInput on wrong length, a non-stochastic row, or when a row
  // is already pending.
  void append_row(std::span<const double> row);
  // Records the expert set of the pending row. Throws if nothing is pending.
  void record_activation(std::vector<std::size_t> experts);

  bool operator==(const ExpertCache&) const = default;

 private:
  std::size_t n_experts_;
  std::vector<double> rows_;
  std::vector<std::vector<std::size_t>> activated_;
  std::size_t cumulative_ = 0;
};

struct OnlineStepResult {
  std::vector<std::size_t> selected_experts;  // ascending
  std::vector<double> gate_weights;           // parallel to selected_experts
  std::size_t cumulative_count = 0;
  std::size_t remaining_budget_used = 0;
  // b = m*k - activations through step m-1 (clamped at 0).
  std::size_t budget_available = 0;
  // True when the lower bound had to override the remaining budget.
  bool lower_bound_forced = false;
};

ExpertCache cache_append(ExpertCache cache, std::span<const double> row);

// Routes the newest token m against the cached history S_m:
//  1. candidates: experts i such that (m, i) is among the top m*k entries of
//     S_m (ties: earlier rows first, then lower expert index);
//  2. b = m*k - activations through m-1;
//  3. activate the best min(|candidates|, b, upper_bound) candidates;
//  4. if that is below lower_bound, activate the token's best lower_bound
//     experts instead. With lower_bound = 1 this never exceeds b.
std::pair<ExpertCache, OnlineStepResult> online_route_step(
    ExpertCache cache, std::span<const double> new_row,
    const BudgetConfig& budget);

// In-place form used by decoders that own their cache.
OnlineStepResult online_route_step_inplace(ExpertCache& cache,
                                           std::span<const double> new_row,
                                           const BudgetConfig& budget);

// Replays the online rule over every row of `scores` from an empty cache.
RoutingMask online_route_sequence(const ScoreMatrix& scores,
                                  const BudgetConfig& budget);

// argtop-(m*k) over the cached rows, as (token, expert) pairs sorted
// ascending. Equal to the unbounded sequence-level selection on S_m.
std::vector<TokenExpert> selection_set_at_horizon(const ExpertCache& cache,
                                                  std::size_t k);

struct BudgetAudit {
  std::vector<std::size_t> cumulative;  // after each step
  std::vector<double> ratio;            // cumulative / (m*k)
  double max_ratio = 0.0;
};

BudgetAudit audit_budget(const ExpertCache& cache, std::size_t k);

// Versioned JSON snapshot:
//   {"format":"moelab.expert_cache","version":1,"n_experts":N,
//    "rows":[[...]],"activated":[[...]],"budget":{...}?}
std::string cache_to_json(const ExpertCache& cache,
                          const std::optional<BudgetConfig>& budget = {});
// Restores a snapshot exactly as recorded. Throws InvalidInput on schema or
// invariant violations.
ExpertCache cache_from_json(const std::string& text,
                            std::optional<BudgetConfig>* budget = nullptr);

}  // namespace moelab
