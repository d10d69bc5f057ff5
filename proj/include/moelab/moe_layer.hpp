#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moelab/matrix.hpp"
#include "moelab/online.hpp"
#include "moelab/routing.hpp"

namespace moelab {

// Two-layer FFN expert: D -> F (SiLU) -> D.
struct ExpertParams {
  Matrix w_in;                 // F x D
  std::vector<double> b_in;    // F
  Matrix w_out;                // D x F
  std::vector<double> b_out;   // D

  static ExpertParams zeros(std::size_t d_model, std::size_t d_hidden);
  bool operator==(const ExpertParams&) const = default;
};

struct MoeLayerParams {
  Matrix router;                     // N x D, no bias
  std::vector<ExpertParams> experts;

  std::size_t d_model() const { return router.cols(); }
  std::size_t n_experts() const { return router.rows(); }
  std::size_t d_hidden() const {
    return experts.empty() ? 0 : experts.front().b_in.size();
  }

  static MoeLayerParams zeros(std::size_t d_model, std::size_t d_hidden,
                              std::size_t n_experts);
  // Throws InvalidInput on inconsistent shapes or non-finite values.
  void validate() const;

  bool operator==(const MoeLayerParams&) const = default;
};

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// E(x) = W_out silu(W_in x + b_in) + b_out. `pre` receives W_in x + b_in when
// non-empty (needed by the backward pass).
std::vector<double> expert_forward(const ExpertParams& expert,
                                   std::span<const double> x,
                                   std::span<double> pre = {});

struct RoutingOptions {
  Strategy strategy = Strategy::kTopK;
  BudgetConfig budget;
  bool renormalize_gates = false;

  bool operator==(const RoutingOptions&) const = default;
};

ScoreMatrix router_scores(const MoeLayerParams& params, const Matrix& inputs);

// Strategy dispatch for a single sequence. BatchTopK on one sequence is the
// unbounded sequence-level selection; online replays the causal rule.
RoutingMask route(const ScoreMatrix& scores, const RoutingOptions& options);

// Routes a batch of sequences, jointly for BatchTopK and independently
// otherwise.
std::vector<RoutingMask> route_batch(std::span<const ScoreMatrix> scores,
                                     const RoutingOptions& options);

struct LayerOutput {
  Matrix hidden;              // T x D
  Matrix scores;              // T x N router probabilities
  RoutingMask mask;
  std::size_t flop_estimate = 0;  // expert invocations
};

// h_t = sum_{i selected for t} gate[t][i] * E_i(x_t) + x_t. Only selected
// (token, expert) pairs are evaluated.
LayerOutput moe_forward(const MoeLayerParams& params, const Matrix& inputs,
                        const RoutingOptions& options);

// Same combination with a caller-supplied mask (e.g. from batch routing).
LayerOutput moe_combine(const MoeLayerParams& params, const Matrix& inputs,
                        const ScoreMatrix& scores, RoutingMask mask);

// One decoding session for one layer. Single writer.
struct OnlineSession {
  explicit OnlineSession(std::size_t n_experts) : cache(n_experts) {}
  ExpertCache cache;
  std::size_t expert_invocations = 0;
};

struct OnlineLayerStep {
  std::vector<double> hidden;
  OnlineStepResult routing;
};

OnlineLayerStep moe_forward_online(const MoeLayerParams& params,
                                   OnlineSession& session,
                                   std::span<const double> new_input,
                                   const BudgetConfig& budget,
                                   bool renormalize_gates = false);

// Deterministic initialization from a 64-bit seed. Draw order: router
// (row-major), then per expert w_in, b_in, w_out, b_out, each uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)); the router uses router_scale/sqrt(D).
MoeLayerParams init_layer(std::size_t d_model, std::size_t d_hidden,
                          std::size_t n_experts, std::uint64_t seed,
                          double router_scale = 1.0);

}  // namespace moelab
