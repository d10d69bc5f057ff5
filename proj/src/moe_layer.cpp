#include "moelab/moe_layer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "moelab/error.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw InvalidInput(fmt::format("non-finite value in {}", what));
    }
  }
}

void fill_uniform(Rng& rng, std::span<double> out, double bound) {
  for (double& v : out) v = rng.uniform(-bound, bound);
}

}  // namespace

ExpertParams ExpertParams::zeros(std::size_t d_model, std::size_t d_hidden) {
  return ExpertParams{Matrix(d_hidden, d_model), std::vector<double>(d_hidden),
                      Matrix(d_model, d_hidden), std::vector<double>(d_model)};
}

MoeLayerParams MoeLayerParams::zeros(std::size_t d_model, std::size_t d_hidden,
                                     std::size_t n_experts) {
  MoeLayerParams p;
  p.router = Matrix(n_experts, d_model);
  p.experts.assign(n_experts, ExpertParams::zeros(d_model, d_hidden));
  return p;
}

void MoeLayerParams::validate() const {
  const std::size_t d = d_model();
  const std::size_t n = n_experts();
  if (d == 0 || n == 0) throw InvalidInput("layer needs D >= 1 and N >= 1");
  if (experts.size() != n) {
    throw InvalidInput(fmt::format("router has {} rows but {} experts", n,
                                   experts.size()));
  }
  check_finite(router.data(), "router");
  const std::size_t f = d_hidden();
  for (const auto& e : experts) {
    if (e.w_in.rows() != f || e.w_in.cols() != d || e.b_in.size() != f ||
        e.w_out.rows() != d || e.w_out.cols() != f || e.b_out.size() != d) {
      throw InvalidInput("expert shapes inconsistent with layer");
    }
    check_finite(e.w_in.data(), "expert w_in");
    check_finite(e.b_in, "expert b_in");
    check_finite(e.w_out.data(), "expert w_out");
    check_finite(e.b_out, "expert b_out");
  }
}

std::vector<double> expert_forward(const ExpertParams& expert,
                                   std::span<const double> x,
                                   std::span<double> pre) {
  const std::size_t f = expert.b_in.size();
  std::vector<double> u(f);
  matvec(expert.w_in, x, u);
  for (std::size_t j = 0; j < f; ++j) u[j] += expert.b_in[j];
  if (!pre.empty()) std::copy(u.begin(), u.end(), pre.begin());
  for (double& v : u) v = silu(v);
  std::vector<double> y(expert.b_out.size());
  matvec(expert.w_out, u, y);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += expert.b_out[j];
  return y;
}

ScoreMatrix router_scores(const MoeLayerParams& params, const Matrix& inputs) {
  if (inputs.cols() != params.d_model()) {
    throw InvalidInput(fmt::format("input width {} does not match D={}",
                                   inputs.cols(), params.d_model()));
  }
  Matrix logits(inputs.rows(), params.n_experts());
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    matvec(params.router, inputs.row(t), logits.row(t));
  }
  return softmax_scores(logits);
}

RoutingMask route(const ScoreMatrix& scores, const RoutingOptions& options) {
  RoutingMask mask;
  switch (options.strategy) {
    case Strategy::kTopK:
      mask = topk_route(scores, options.budget.k_tok);
      break;
    case Strategy::kSeqTopK:
    case Strategy::kBatchTopK:
      mask = seqtopk_route_unbounded(scores, options.budget.k_tok);
      break;
    case Strategy::kSeqTopKBounded:
      mask = seqtopk_route_bounded(scores, options.budget);
      break;
    case Strategy::kOnlineSeqTopK:
      mask = online_route_sequence(scores, options.budget);
      break;
  }
  return options.renormalize_gates ? mask.renormalized() : mask;
}

std::vector<RoutingMask> route_batch(std::span<const ScoreMatrix> scores,
                                     const RoutingOptions& options) {
  std::vector<RoutingMask> out;
  if (options.strategy == Strategy::kBatchTopK) {
    out = batchtopk_route(scores, options.budget.k_tok);
    if (options.renormalize_gates) {
      for (auto& m : out) m = m.renormalized();
    }
    return out;
  }
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(route(s, options));
  return out;
}

LayerOutput moe_combine(const MoeLayerParams& params, const Matrix& inputs,
                        const ScoreMatrix& scores, RoutingMask mask) {
  if (mask.tokens() != inputs.rows() || mask.experts() != params.n_experts()) {
    throw InvalidInput("mask shape does not match inputs and layer");
  }
  LayerOutput out;
  out.hidden = inputs;
  out.scores = scores.values();
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    auto h = out.hidden.row(t);
    for (std::size_t i = 0; i < params.n_experts(); ++i) {
      if (!mask.selected(t, i)) continue;
      const auto y = expert_forward(params.experts[i], inputs.row(t));
      const double g = mask.gate(t, i);
      for (std::size_t d = 0; d < h.size(); ++d) h[d] += g * y[d];
      ++out.flop_estimate;
    }
  }
  out.mask = std::move(mask);
  return out;
}

LayerOutput moe_forward(const MoeLayerParams& params, const Matrix& inputs,
                        const RoutingOptions& options) {
  auto scores = router_scores(params, inputs);
  auto mask = route(scores, options);
  return moe_combine(params, inputs, scores, std::move(mask));
}

OnlineLayerStep moe_forward_online(const MoeLayerParams& params,
                                   OnlineSession& session,
                                   std::span<const double> new_input,
                                   const BudgetConfig& budget,
                                   bool renormalize_gates) {
  if (session.cache.n_experts() != params.n_experts()) {
    throw InvalidInput("session expert count does not match layer");
  }
  if (new_input.size() != params.d_model()) {
    throw InvalidInput(fmt::format("input width {} does not match D={}",
                                   new_input.size(), params.d_model()));
  }
  std::vector<double> logits(params.n_experts());
  matvec(params.router, new_input, logits);
  const auto scores = softmax(logits);

  OnlineLayerStep step;
  step.routing = online_route_step_inplace(session.cache, scores, budget);
  step.hidden.assign(new_input.begin(), new_input.end());
  double norm = 1.0;
  if (renormalize_gates) {
    norm = 0.0;
    for (double g : step.routing.gate_weights) norm += g;
  }
  for (std::size_t j = 0; j < step.routing.selected_experts.size(); ++j) {
    const auto y =
        expert_forward(params.experts[step.routing.selected_experts[j]], new_input);
    const double g = step.routing.gate_weights[j] / norm;
    for (std::size_t d = 0; d < y.size(); ++d) step.hidden[d] += g * y[d];
    ++session.expert_invocations;
  }
  return step;
}

MoeLayerParams init_layer(std::size_t d_model, std::size_t d_hidden,
                          std::size_t n_experts, std::uint64_t seed,
                          double router_scale) {
  if (d_model == 0 || d_hidden == 0 || n_experts == 0) {
    throw InvalidInput("layer dimensions must be positive");
  }
  Rng rng(seed);
  auto p = MoeLayerParams::zeros(d_model, d_hidden, n_experts);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(d_hidden));
  fill_uniform(rng, p.router.data(), router_scale * in_bound);
  for (auto& e : p.experts) {
    fill_uniform(rng, e.w_in.data(), in_bound);
    fill_uniform(rng, e.b_in, in_bound);
    fill_uniform(rng, e.w_out.data(), hid_bound);
    fill_uniform(rng, e.b_out, hid_bound);
  }
  return p;
}

}  // namespace moelab
