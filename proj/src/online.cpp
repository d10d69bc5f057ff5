#include "moelab/online.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moelab/error.hpp"

namespace moelab {

namespace {
constexpr int kCacheFormatVersion = 1;
constexpr const char* kCacheFormatName = "moelab.expert_cache";
}  // namespace

ExpertCache::ExpertCache(std::size_t n_experts) : n_experts_(n_experts) {
  if (n_experts == 0) throw InvalidInput("expert cache needs N >= 1");
}

ScoreMatrix ExpertCache::scores() const {
  Matrix m(steps(), n_experts_);
  std::copy(rows_.begin(), rows_.end(), m.data().begin());
  return ScoreMatrix(std::move(m));
}

void ExpertCache::append_row(std::span<const double> row) {
  if (row.size() != n_experts_) {
    throw InvalidInput(fmt::format("score row has {} entries, cache holds {}",
                                   row.size(), n_experts_));
  }
  if (has_pending_row()) {
    throw InvalidInput("previous row has not been routed yet");
  }
  validate_probability_row(row);
  rows_.insert(rows_.end(), row.begin(), row.end());
}

void ExpertCache::record_activation(std::vector<std::size_t> experts) {
  if (!has_pending_row()) throw InvalidInput("no pending row to route");
  std::sort(experts.begin(), experts.end());
  if (std::adjacent_find(experts.begin(), experts.end()) != experts.end() ||
      (!experts.empty() && experts.back() >= n_experts_)) {
    throw InvalidInput("activation set has duplicate or out-of-range experts");
  }
  cumulative_ += experts.size();
  activated_.push_back(std::move(experts));
}

ExpertCache cache_append(ExpertCache cache, std::span<const double> row) {
  cache.append_row(row);
  return cache;
}

OnlineStepResult online_route_step_inplace(ExpertCache& cache,
                                           std::span<const double> new_row,
                                           const BudgetConfig& budget) {
  budget.validate(cache.n_experts());
  const std::size_t prior = cache.cumulative_activations();
  cache.append_row(new_row);

  const std::size_t m = cache.steps();
  const std::size_t n = cache.n_experts();
  const std::size_t horizon_budget = m * budget.k_tok;

  // The candidate set for token m is a prefix of its ranked row: the global
  // order agrees with the row order inside one row. Count how many of token
  // m's entries land in the top m*k of S_m: an entry (m, i) makes it iff
  // fewer than m*k entries outrank it. Earlier rows win ties.
  const auto ranked = ranked_experts(new_row);
  std::vector<double> history;
  history.reserve((m - 1) * n);
  for (std::size_t s = 0; s + 1 < m; ++s) {
    auto r = cache.score_row(s);
    history.insert(history.end(), r.begin(), r.end());
  }
  std::sort(history.begin(), history.end(), std::greater<>());

  std::size_t candidates = 0;
  for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
    const double v = new_row[ranked[pos]];
    // History entries with score >= v outrank (m, i); so do the `pos` better
    // entries of the current row.
    const auto above = static_cast<std::size_t>(
        std::upper_bound(history.begin(), history.end(), v, std::greater<>()) -
        history.begin());
    if (above + pos < horizon_budget) {
      ++candidates;
    } else {
      break;
    }
  }

  OnlineStepResult result;
  result.budget_available = horizon_budget > prior ? horizon_budget - prior : 0;
  std::size_t take =
      std::min({candidates, result.budget_available, budget.upper_bound});
  if (take < budget.lower_bound) {
    take = budget.lower_bound;
    result.lower_bound_forced = true;
  }

  std::vector<std::size_t> chosen(ranked.begin(),
                                  ranked.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(chosen.begin(), chosen.end());
  result.gate_weights.reserve(chosen.size());
  for (std::size_t i : chosen) result.gate_weights.push_back(new_row[i]);
  result.selected_experts = chosen;
  result.remaining_budget_used = chosen.size();
  cache.record_activation(std::move(chosen));
  result.cumulative_count = cache.cumulative_activations();
  return result;
}

std::pair<ExpertCache, OnlineStepResult> online_route_step(
    ExpertCache cache, std::span<const double> new_row,
    const BudgetConfig& budget) {
  auto result = online_route_step_inplace(cache, new_row, budget);
  return {std::move(cache), std::move(result)};
}

RoutingMask online_route_sequence(const ScoreMatrix& scores,
                                  const BudgetConfig& budget) {
  ExpertCache cache(scores.experts());
  std::vector<std::uint8_t> sel(scores.tokens() * scores.experts(), 0);
  for (std::size_t t = 0; t < scores.tokens(); ++t) {
    auto step = online_route_step_inplace(cache, scores.row(t), budget);
    for (std::size_t i : step.selected_experts) sel[t * scores.experts() + i] = 1;
  }
  return RoutingMask(scores, std::move(sel));
}

std::vector<TokenExpert> selection_set_at_horizon(const ExpertCache& cache,
                                                  std::size_t k) {
  if (cache.steps() == 0) throw InvalidInput("empty expert cache");
  if (k < 1 || k > cache.n_experts()) {
    throw BudgetInfeasible(fmt::format("k={} outside [1, {}]", k, cache.n_experts()));
  }
  const std::size_t n = cache.n_experts();
  struct Entry {
    double score;
    std::size_t token;
    std::size_t expert;
  };
  std::vector<Entry> entries;
  entries.reserve(cache.steps() * n);
  for (std::size_t t = 0; t < cache.steps(); ++t) {
    auto r = cache.score_row(t);
    for (std::size_t i = 0; i < n; ++i) entries.push_back({r[i], t, i});
  }
  const std::size_t count = cache.steps() * k;
  std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(count),
                    entries.end(), [](const Entry& a, const Entry& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.token != b.token) return a.token < b.token;
                      return a.expert < b.expert;
                    });
  std::vector<TokenExpert> out;
  out.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    out.push_back({entries[j].token, entries[j].expert});
  }
  std::sort(out.begin(), out.end());
  return out;
}

BudgetAudit audit_budget(const ExpertCache& cache, std::size_t k) {
  if (cache.routed_steps() == 0) throw InvalidInput("nothing to audit");
  if (k == 0) throw BudgetInfeasible("k must be positive");
  BudgetAudit audit;
  std::size_t running = 0;
  for (std::size_t m = 1; m <= cache.routed_steps(); ++m) {
    running += cache.activated()[m - 1].size();
    const double ratio =
        static_cast<double>(running) / static_cast<double>(m * k);
    audit.cumulative.push_back(running);
    audit.ratio.push_back(ratio);
    audit.max_ratio = std::max(audit.max_ratio, ratio);
  }
  return audit;
}

std::string cache_to_json(const ExpertCache& cache,
                          const std::optional<BudgetConfig>& budget) {
  nlohmann::json j;
  j["format"] = kCacheFormatName;
  j["version"] = kCacheFormatVersion;
  j["n_experts"] = cache.n_experts();
  auto rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cache.steps(); ++t) {
    auto r = cache.score_row(t);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["rows"] = std::move(rows);
  j["activated"] = cache.activated();
  if (budget) {
    j["budget"] = {{"k", budget->k_tok},
                   {"lower_bound", budget->lower_bound},
                   {"upper_bound", budget->upper_bound}};
  }
  return j.dump();
}

ExpertCache cache_from_json(const std::string& text,
                            std::optional<BudgetConfig>* budget) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != kCacheFormatName) {
      throw InvalidInput("not an expert cache snapshot");
    }
    if (j.at("version").get<int>() != kCacheFormatVersion) {
      throw InvalidInput("unsupported expert cache snapshot version");
    }
    ExpertCache cache(j.at("n_experts").get<std::size_t>());
    const auto rows = j.at("rows").get<std::vector<std::vector<double>>>();
    const auto activated =
        j.at("activated").get<std::vector<std::vector<std::size_t>>>();
    if (activated.size() > rows.size() || rows.size() > activated.size() + 1) {
      throw InvalidInput("snapshot rows and activations disagree");
    }
    for (std::size_t t = 0; t < rows.size(); ++t) {
      cache.append_row(rows[t]);
      if (t < activated.size()) cache.record_activation(activated[t]);
    }
    if (budget) {
      budget->reset();
      if (j.contains("budget")) {
        const auto& b = j["budget"];
        *budget = BudgetConfig{b.at("k").get<std::size_t>(),
                               b.at("lower_bound").get<std::size_t>(),
                               b.at("upper_bound").get<std::size_t>()};
      }
    }
    return cache;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(fmt::format("bad expert cache snapshot: {}", e.what()));
  }
}

}  // namespace moelab
