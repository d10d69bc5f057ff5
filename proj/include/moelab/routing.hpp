#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moelab/matrix.hpp"

namespace moelab {

inline constexpr double kRowSumTolerance = 1e-6;

// Row-stochastic T x N matrix of router probabilities for one sequence.
// Construction validates the invariants; the payload is immutable afterwards.
class ScoreMatrix {
 public:
  // Throws InvalidInput unless T >= 1, N >= 1, every entry is in [0, 1] and
  // every row sums to 1 within kRowSumTolerance.
  explicit ScoreMatrix(Matrix values);
  static ScoreMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t tokens() const { return values_.rows(); }
  std::size_t experts() const { return values_.cols(); }
  double operator()(std::size_t t, std::size_t i) const { return values_(t, i); }
  std::span<const double> row(std::size_t t) const { return values_.row(t); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

// Throws InvalidInput if `row` is not a probability row within tolerance.
void validate_probability_row(std::span<const double> row);

struct BudgetConfig {
  std::size_t k_tok = 1;
  std::size_t lower_bound = 1;
  std::size_t upper_bound = 3;

  // Defaults: lower bound 1, upper bound min(k + 2, n_experts).
  static BudgetConfig with_defaults(std::size_t k, std::size_t n_experts);

  // Throws BudgetInfeasible unless 1 <= lower <= k <= upper <= n_experts.
  void validate(std::size_t n_experts) const;

  std::size_t sequence_budget(std::size_t tokens) const { return tokens * k_tok; }

  bool operator==(const BudgetConfig&) const = default;
};

struct TokenExpert {
  std::size_t token;
  std::size_t expert;
  auto operator<=>(const TokenExpert&) const = default;
};

// Binary selection plus gate weights. Gate weights are the raw scores of the
// selected entries unless renormalized() was applied.
class RoutingMask {
 public:
  RoutingMask() = default;
  RoutingMask(const ScoreMatrix& scores, std::vector<std::uint8_t> selected);

  std::size_t tokens() const { return tokens_; }
  std::size_t experts() const { return experts_; }
  bool selected(std::size_t t, std::size_t i) const {
    return selected_[t * experts_ + i] != 0;
  }
  double gate(std::size_t t, std::size_t i) const { return gates_(t, i); }
  const Matrix& gate_weights() const { return gates_; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t total() const { return total_; }
  std::span<const std::uint8_t> selection() const { return selected_; }

  // Expert indices selected for token t, ascending.
  std::vector<std::size_t> experts_for(std::size_t t) const;
  std::vector<TokenExpert> selected_pairs() const;

  // Copy whose gate weights are divided by the per-token sum of selected
  // scores. Tokens with no selection keep all-zero gates.
  RoutingMask renormalized() const;

  bool same_selection(const RoutingMask& other) const {
    return tokens_ == other.tokens_ && experts_ == other.experts_ &&
           selected_ == other.selected_;
  }
  bool operator==(const RoutingMask&) const = default;

 private:
  std::size_t tokens_ = 0;
  std::size_t experts_ = 0;
  std::vector<std::uint8_t> selected_;
  Matrix gates_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

// Row-wise softmax with max subtraction. Throws InvalidInput on non-finite
// logits or an empty matrix.
ScoreMatrix softmax_scores(const Matrix& logits);
std::vector<double> softmax(std::span<const double> logits);

// Expert indices of one row ordered by (score desc, index asc).
std::vector<std::size_t> ranked_experts(std::span<const double> row);

// Each token keeps its k largest scores.
RoutingMask topk_route(const ScoreMatrix& scores, std::size_t k);

// The T*k globally largest entries of the flattened matrix; per-token counts
// are unconstrained and may be zero.
RoutingMask seqtopk_route_unbounded(const ScoreMatrix& scores, std::size_t k);

// T*k_tok entries with every token's count in [lower_bound, upper_bound],
// maximizing the total selected score. Each token is first granted its
// lower_bound best experts, then the remaining budget goes greedily to the
// largest remaining entries of tokens still under the cap.
RoutingMask seqtopk_route_bounded(const ScoreMatrix& scores,
                                  const BudgetConfig& budget);

// Sum_b T_b*k entries across the whole batch.
std::vector<RoutingMask> batchtopk_route(std::span<const ScoreMatrix> batch,
                                         std::size_t k);

enum class Strategy {
  kTopK,
  kSeqTopK,
  kSeqTopKBounded,
  kBatchTopK,
  kOnlineSeqTopK,
};

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

// Number of selected entries a strategy is required to produce for one
// sequence of `tokens` rows routed on its own. Online routing only promises an
// upper bound, returned here.
std::size_t strategy_budget(Strategy s, std::size_t tokens, std::size_t n_experts,
                            const BudgetConfig& budget);

}  // namespace moelab
