#include "moelab/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "moelab/error.hpp"

namespace moelab {
namespace {

// Global tie order: larger score first, then lower flat index. Flat indices
// are laid out token-major, so this is (lower token, lower expert) for one
// sequence and (lower batch, lower token, lower expert) for a batch.
struct FlatEntry {
  double score;
  std::size_t flat;
};

bool outranks(const FlatEntry& a, const FlatEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.flat < b.flat;
}

// Flat indices of the `count` best entries, in rank order.
std::vector<std::size_t> top_flat(std::span<const double> values,
                                  std::size_t count) {
  std::vector<FlatEntry> entries(values.size());
  for (std::size_t j = 0; j < values.size(); ++j) entries[j] = {values[j], j};
  count = std::min(count, entries.size());
  std::partial_sort(entries.begin(), entries.begin() + count, entries.end(),
                    outranks);
  std::vector<std::size_t> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = entries[j].flat;
  return out;
}

void check_k(std::size_t k, std::size_t n_experts) {
  if (k < 1 || k > n_experts) {
    throw BudgetInfeasible(
        fmt::format("k={} outside [1, {}] experts", k, n_experts));
  }
}

}  // namespace

void validate_probability_row(std::span<const double> row) {
  double sum = 0.0;
  for (double v : row) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidInput(fmt::format("score {} outside [0, 1]", v));
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRowSumTolerance) {
    throw InvalidInput(fmt::format("score row sums to {:.9g}, expected 1", sum));
  }
}

ScoreMatrix::ScoreMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) {
    throw InvalidInput("score matrix needs at least one token and one expert");
  }
  for (std::size_t t = 0; t < values_.rows(); ++t) {
    try {
      validate_probability_row(values_.row(t));
    } catch (const InvalidInput& e) {
      throw InvalidInput(fmt::format("row {}: {}", t, e.what()));
    }
  }
}

ScoreMatrix ScoreMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  return ScoreMatrix(Matrix::from_rows(rows));
}

BudgetConfig BudgetConfig::with_defaults(std::size_t k, std::size_t n_experts) {
  return BudgetConfig{k, 1, std::min(k + 2, n_experts)};
}

void BudgetConfig::validate(std::size_t n_experts) const {
  if (lower_bound < 1 || lower_bound > k_tok || k_tok > upper_bound ||
      upper_bound > n_experts) {
    throw BudgetInfeasible(fmt::format(
        "budget requires 1 <= lower({}) <= k({}) <= upper({}) <= experts({})",
        lower_bound, k_tok, upper_bound, n_experts));
  }
}

RoutingMask::RoutingMask(const ScoreMatrix& scores,
                         std::vector<std::uint8_t> selected)
    : tokens_(scores.tokens()),
      experts_(scores.experts()),
      selected_(std::move(selected)),
      gates_(tokens_, experts_),
      counts_(tokens_, 0) {
  if (selected_.size() != tokens_ * experts_) {
    throw InvalidInput("selection size does not match score matrix");
  }
  for (std::size_t t = 0; t < tokens_; ++t) {
    for (std::size_t i = 0; i < experts_; ++i) {
      if (selected_[t * experts_ + i]) {
        selected_[t * experts_ + i] = 1;
        gates_(t, i) = scores(t, i);
        ++counts_[t];
      }
    }
  }
  total_ = std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::vector<std::size_t> RoutingMask::experts_for(std::size_t t) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < experts_; ++i) {
    if (selected(t, i)) out.push_back(i);
  }
  return out;
}

std::vector<TokenExpert> RoutingMask::selected_pairs() const {
  std::vector<TokenExpert> out;
  out.reserve(total_);
  for (std::size_t t = 0; t < tokens_; ++t) {
    for (std::size_t i = 0; i < experts_; ++i) {
      if (selected(t, i)) out.push_back({t, i});
    }
  }
  return out;
}

RoutingMask RoutingMask::renormalized() const {
  RoutingMask out = *this;
  for (std::size_t t = 0; t < tokens_; ++t) {
    auto row = out.gates_.row(t);
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    if (sum <= 0.0) continue;
    for (double& g : row) g /= sum;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  double peak = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidInput("non-finite logit");
    peak = std::max(peak, z);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

ScoreMatrix softmax_scores(const Matrix& logits) {
  if (logits.rows() == 0 || logits.cols() == 0) {
    throw InvalidInput("softmax of an empty matrix");
  }
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    auto row = softmax(logits.row(t));
    std::copy(row.begin(), row.end(), out.row(t).begin());
  }
  return ScoreMatrix(std::move(out));
}

std::vector<std::size_t> ranked_experts(std::span<const double> row) {
  return top_flat(row, row.size());
}

RoutingMask topk_route(const ScoreMatrix& scores, std::size_t k) {
  const std::size_t n = scores.experts();
  check_k(k, n);
  std::vector<std::uint8_t> sel(scores.tokens() * n, 0);
  for (std::size_t t = 0; t < scores.tokens(); ++t) {
    for (std::size_t i : top_flat(scores.row(t), k)) sel[t * n + i] = 1;
  }
  return RoutingMask(scores, std::move(sel));
}

RoutingMask seqtopk_route_unbounded(const ScoreMatrix& scores, std::size_t k) {
  check_k(k, scores.experts());
  const auto& values = scores.values();
  std::vector<std::uint8_t> sel(values.size(), 0);
  for (std::size_t j : top_flat(values.data(), scores.tokens() * k)) sel[j] = 1;
  return RoutingMask(scores, std::move(sel));
}

RoutingMask seqtopk_route_bounded(const ScoreMatrix& scores,
                                  const BudgetConfig& budget) {
  const std::size_t tokens = scores.tokens();
  const std::size_t n = scores.experts();
  budget.validate(n);
  const std::size_t target = budget.sequence_budget(tokens);
  if (budget.upper_bound * tokens < target ||
      budget.lower_bound * tokens > target) {
    throw BudgetInfeasible("token bounds cannot meet the sequence budget");
  }

  std::vector<std::uint8_t> sel(tokens * n, 0);
  std::vector<std::size_t> counts(tokens, 0);
  std::size_t total = 0;

  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t i : top_flat(scores.row(t), budget.lower_bound)) {
      sel[t * n + i] = 1;
    }
    counts[t] = budget.lower_bound;
    total += budget.lower_bound;
  }

  std::vector<FlatEntry> rest;
  rest.reserve(tokens * n - total);
  const auto flat = scores.values().data();
  for (std::size_t j = 0; j < flat.size(); ++j) {
    if (!sel[j]) rest.push_back({flat[j], j});
  }
  std::sort(rest.begin(), rest.end(), outranks);
  for (const auto& e : rest) {
    if (total == target) break;
    const std::size_t t = e.flat / n;
    if (counts[t] >= budget.upper_bound) continue;
    sel[e.flat] = 1;
    ++counts[t];
    ++total;
  }
  return RoutingMask(scores, std::move(sel));
}

std::vector<RoutingMask> batchtopk_route(std::span<const ScoreMatrix> batch,
                                         std::size_t k) {
  if (batch.empty()) throw InvalidInput("empty batch");
  const std::size_t n = batch.front().experts();
  std::vector<double> flat;
  std::vector<std::size_t> offsets;
  std::size_t budget = 0;
  for (const auto& seq : batch) {
    if (seq.experts() != n) {
      throw InvalidInput("all sequences in a batch must share the expert count");
    }
    offsets.push_back(flat.size());
    auto data = seq.values().data();
    flat.insert(flat.end(), data.begin(), data.end());
    budget += seq.tokens() * k;
  }
  check_k(k, n);

  std::vector<std::uint8_t> sel(flat.size(), 0);
  for (std::size_t j : top_flat(flat, budget)) sel[j] = 1;

  std::vector<RoutingMask> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto first = sel.begin() + static_cast<std::ptrdiff_t>(offsets[b]);
    const auto len = static_cast<std::ptrdiff_t>(batch[b].values().size());
    out.emplace_back(batch[b], std::vector<std::uint8_t>(first, first + len));
  }
  return out;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kTopK: return "topk";
    case Strategy::kSeqTopK: return "seqtopk";
    case Strategy::kSeqTopKBounded: return "seqtopk-bounded";
    case Strategy::kBatchTopK: return "batchtopk";
    case Strategy::kOnlineSeqTopK: return "online-seqtopk";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::kTopK, Strategy::kSeqTopK,
                     Strategy::kSeqTopKBounded, Strategy::kBatchTopK,
                     Strategy::kOnlineSeqTopK}) {
    if (to_string(s) == name) return s;
  }
  // Underscore spellings are accepted too.
  if (name == "seqtopk_bounded") return Strategy::kSeqTopKBounded;
  if (name == "online_seqtopk") return Strategy::kOnlineSeqTopK;
  return std::nullopt;
}

std::size_t strategy_budget(Strategy s, std::size_t tokens, std::size_t n_experts,
                            const BudgetConfig& budget) {
  switch (s) {
    case Strategy::kTopK:
    case Strategy::kSeqTopKBounded:
    case Strategy::kOnlineSeqTopK:
      return tokens * budget.k_tok;
    case Strategy::kSeqTopK:
    case Strategy::kBatchTopK:
      return std::min(tokens * budget.k_tok, tokens * n_experts);
  }
  return 0;
}

}  // namespace moelab
