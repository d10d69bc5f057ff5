#include "moelab/verify/oracles.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "moelab/backward.hpp"

namespace moelab::oracle {

std::vector<long double> softmax_long_double(std::span<const double> logits) {
  long double peak = -std::numeric_limits<long double>::infinity();
  for (double z : logits) peak = std::max(peak, static_cast<long double>(z));
  std::vector<long double> out(logits.size());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<long double>(logits[i]) - peak);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

std::optional<double> brute_force_bounded_best(const ScoreMatrix& scores,
                                               const BudgetConfig& budget) {
  const std::size_t tokens = scores.tokens();
  const std::size_t n = scores.experts();
  const std::size_t cells = tokens * n;
  const std::size_t target = tokens * budget.k_tok;
  std::optional<double> best;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << cells); ++bits) {
    if (static_cast<std::size_t>(std::popcount(bits)) != target) continue;
    bool ok = true;
    double sum = 0.0;
    for (std::size_t t = 0; t < tokens && ok; ++t) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (bits >> (t * n + i) & 1U) {
          ++count;
          sum += scores(t, i);
        }
      }
      ok = count >= budget.lower_bound && count <= budget.upper_bound;
    }
    if (ok && (!best || sum > *best)) best = sum;
  }
  return best;
}

std::vector<std::size_t> reference_top_set(std::span<const double> values,
                                           std::size_t count) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return values[a] > values[b];
  });
  idx.resize(std::min(count, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Matrix dense_reference_forward(const MoeLayerParams& params, const Matrix& inputs,
                               const Matrix& gates) {
  Matrix out = inputs;
  const std::size_t d = params.d_model();
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    for (std::size_t i = 0; i < params.n_experts(); ++i) {
      const auto& e = params.experts[i];
      // Spelled out rather than calling expert_forward.
      std::vector<double> hidden(e.b_in.size());
      for (std::size_t h = 0; h < hidden.size(); ++h) {
        double u = e.b_in[h];
        for (std::size_t c = 0; c < d; ++c) u += e.w_in(h, c) * inputs(t, c);
        hidden[h] = u / (1.0 + std::exp(-u));
      }
      for (std::size_t r = 0; r < d; ++r) {
        double y = e.b_out[r];
        for (std::size_t h = 0; h < hidden.size(); ++h) y += e.w_out(r, h) * hidden[h];
        out(t, r) += gates(t, i) * y;
      }
    }
  }
  return out;
}

std::vector<double> finite_difference_gradient(
    std::vector<MoeLayerParams>& layers, const std::function<double()>& loss,
    double step) {
  std::vector<double*> slots;
  for (auto& layer : layers) {
    for_each_parameter(layer, [&](double& v) { slots.push_back(&v); });
  }
  std::vector<double> grad(slots.size());
  for (std::size_t j = 0; j < slots.size(); ++j) {
    const double saved = *slots[j];
    *slots[j] = saved + step;
    const double up = loss();
    *slots[j] = saved - step;
    const double down = loss();
    *slots[j] = saved;
    grad[j] = (up - down) / (2.0 * step);
  }
  return grad;
}

double selection_gap(const Matrix& scores, const RoutingMask& mask) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < scores.size(); ++a) {
    if (!mask.selection()[a]) continue;
    for (std::size_t b = 0; b < scores.size(); ++b) {
      if (mask.selection()[b]) continue;
      gap = std::min(gap, std::abs(scores.data()[a] - scores.data()[b]));
    }
  }
  return gap;
}

}  // namespace moelab::oracle
