#include "moelab/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moelab/error.hpp"
#include "moelab/moe_layer.hpp"

namespace moelab {

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double normalized_entropy(std::span<const double> p) {
  if (p.size() <= 1) return 1.0;
  const double h = entropy(p) / std::log(static_cast<double>(p.size()));
  return std::clamp(h, 0.0, 1.0);
}

RoutingStats routing_entropy(std::span<const Matrix> assignment_probs,
                             std::size_t layer_index) {
  std::size_t n = 0;
  std::size_t tokens = 0;
  for (const auto& m : assignment_probs) {
    if (m.rows() == 0) continue;
    if (n == 0) n = m.cols();
    if (m.cols() != n) throw InvalidInput("assignment rows differ in width");
    tokens += m.rows();
  }
  if (tokens == 0 || n == 0) throw InvalidInput("routing entropy of an empty corpus");

  RoutingStats stats;
  stats.layer_index = layer_index;
  stats.per_expert_load.assign(n, 0.0);
  for (const auto& m : assignment_probs) {
    for (std::size_t t = 0; t < m.rows(); ++t) {
      validate_probability_row(m.row(t));
      for (std::size_t e = 0; e < n; ++e) stats.per_expert_load[e] += m(t, e);
    }
  }
  for (double& v : stats.per_expert_load) v /= static_cast<double>(tokens);
  stats.entropy = entropy(stats.per_expert_load);
  stats.normalized_entropy = normalized_entropy(stats.per_expert_load);
  return stats;
}

RoutingStats routing_entropy(const Matrix& assignment_probs,
                             std::size_t layer_index) {
  return routing_entropy(std::span<const Matrix>(&assignment_probs, 1), layer_index);
}

std::vector<double> expert_load(std::span<const RoutingMask> masks) {
  if (masks.empty()) throw InvalidInput("expert load of no masks");
  const std::size_t n = masks.front().experts();
  std::vector<double> load(n, 0.0);
  std::size_t total = 0;
  for (const auto& m : masks) {
    if (m.experts() != n) throw InvalidInput("masks differ in expert count");
    for (std::size_t t = 0; t < m.tokens(); ++t) {
      for (std::size_t i = 0; i < n; ++i) load[i] += m.selected(t, i) ? 1.0 : 0.0;
    }
    total += m.total();
  }
  if (total > 0) {
    for (double& v : load) v /= static_cast<double>(total);
  }
  return load;
}

std::map<std::size_t, std::size_t> activation_distribution(
    std::span<const RoutingMask> masks) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& m : masks) {
    for (std::size_t c : m.counts()) ++hist[c];
  }
  return hist;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw CorrelationUndefined("correlation needs two equally long series of length >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw CorrelationUndefined("correlation undefined: zero variance");
  }
  return sxy / std::sqrt(sxx * syy);
}

EntropyCorrelation token_entropy_vs_experts(
    std::span<const TokenEntropyRecord> records, std::size_t n_bins) {
  std::vector<double> h, c;
  h.reserve(records.size());
  c.reserve(records.size());
  for (const auto& r : records) {
    h.push_back(r.entropy);
    c.push_back(static_cast<double>(r.activated_experts));
  }
  EntropyCorrelation out;
  out.pearson = pearson_correlation(h, c);

  // Equal-count bins over the entropy order.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return h[a] < h[b]; });
  n_bins = std::max<std::size_t>(1, std::min(n_bins, order.size()));
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * order.size() / n_bins;
    const std::size_t hi = (b + 1) * order.size() / n_bins;
    if (lo == hi) continue;
    EntropyBin bin;
    bin.entropy_lo = h[order[lo]];
    bin.entropy_hi = h[order[hi - 1]];
    for (std::size_t j = lo; j < hi; ++j) {
      bin.mean_entropy += h[order[j]];
      bin.mean_experts += c[order[j]];
    }
    bin.count = hi - lo;
    bin.mean_entropy /= static_cast<double>(bin.count);
    bin.mean_experts /= static_cast<double>(bin.count);
    out.bins.push_back(bin);
  }
  return out;
}

std::vector<BatchSweepEntry> batch_sensitivity_sweep(
    Strategy strategy, const BudgetConfig& budget,
    std::span<const std::size_t> batch_sizes,
    std::span<const ScoreMatrix> corpus) {
  if (corpus.empty()) throw InvalidInput("empty corpus");
  const RoutingOptions options{strategy, budget, false};

  auto run = [&](std::size_t batch_size) {
    if (batch_size == 0 || corpus.size() % batch_size != 0) {
      throw InvalidInput(fmt::format("batch size {} does not divide corpus of {}",
                                     batch_size, corpus.size()));
    }
    BatchSweepEntry entry;
    entry.batch_size = batch_size;
    for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
      auto masks = route_batch(corpus.subspan(start, batch_size), options);
      for (auto& m : masks) entry.masks.push_back(std::move(m));
    }
    std::size_t tokens = 0;
    double mass = 0.0;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      const auto& m = entry.masks[s];
      const double want = static_cast<double>(m.tokens() * budget.k_tok);
      entry.mean_budget_deviation += std::abs(static_cast<double>(m.total()) - want);
      for (double g : m.gate_weights().data()) mass += g;
      tokens += m.tokens();
    }
    entry.mean_budget_deviation /= static_cast<double>(corpus.size());
    entry.mean_gate_mass = mass / static_cast<double>(tokens);
    return entry;
  };

  const auto unbatched = run(1);
  std::vector<BatchSweepEntry> out;
  for (std::size_t bs : batch_sizes) {
    auto entry = bs == 1 ? unbatched : run(bs);
    entry.identical_to_unbatched = entry.masks == unbatched.masks;
    out.push_back(std::move(entry));
  }
  return out;
}

std::string reports_to_json(std::span<const MetricReport> reports) {
  nlohmann::json j;
  j["schema"] = "moelab.report";
  j["version"] = 1;
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) {
    arr.push_back({{"metric", r.metric},
                   {"layer", r.layer},
                   {"strategy", r.strategy},
                   {"values", r.values}});
  }
  j["reports"] = std::move(arr);
  return j.dump(2);
}

}  // namespace moelab
