#include "moelab/backward.hpp"

#include <fmt/format.h>

#include "moelab/error.hpp"

namespace moelab {

RecordedForward moe_forward_recorded(const MoeLayerParams& params,
                                     const Matrix& inputs,
                                     const ScoreMatrix& scores,
                                     RoutingMask mask, bool renormalized) {
  if (mask.tokens() != inputs.rows() || mask.experts() != params.n_experts() ||
      inputs.cols() != params.d_model()) {
    throw InvalidInput("recorded forward: shape mismatch");
  }
  RecordedForward rec;
  auto& tape = rec.tape;
  tape.input = inputs;
  tape.scores = scores.values();
  tape.renormalized = renormalized;
  tape.pairs = mask.selected_pairs();
  tape.pre.reserve(tape.pairs.size());
  tape.out.reserve(tape.pairs.size());

  auto& out = rec.output;
  out.hidden = inputs;
  out.scores = scores.values();
  for (const auto& [t, i] : tape.pairs) {
    std::vector<double> pre(params.d_hidden());
    auto y = expert_forward(params.experts[i], inputs.row(t), pre);
    const double g = mask.gate(t, i);
    auto h = out.hidden.row(t);
    for (std::size_t d = 0; d < h.size(); ++d) h[d] += g * y[d];
    tape.pre.push_back(std::move(pre));
    tape.out.push_back(std::move(y));
  }
  out.flop_estimate = tape.pairs.size();
  out.mask = mask;
  tape.mask = std::move(mask);
  return rec;
}

LayerGradients moe_backward(const MoeLayerParams& params, const LayerTape& tape,
                            const Matrix& d_hidden, const Matrix& d_scores_extra) {
  const std::size_t tokens = tape.input.rows();
  const std::size_t n = params.n_experts();
  const std::size_t f = params.d_hidden();
  if (d_hidden.rows() != tokens || d_hidden.cols() != params.d_model()) {
    throw InvalidInput("backward: upstream gradient shape mismatch");
  }
  const bool has_extra = !d_scores_extra.empty();
  if (has_extra &&
      (d_scores_extra.rows() != tokens || d_scores_extra.cols() != n)) {
    throw InvalidInput("backward: score gradient shape mismatch");
  }

  LayerGradients g;
  g.params = MoeLayerParams::zeros(params.d_model(), f, n);
  g.d_inputs = d_hidden;  // residual path

  // dL/d(gate) per (t, i), then mapped to dL/ds.
  Matrix d_gate(tokens, n);
  std::vector<double> act(f), dy(params.d_model()), du(f);
  for (std::size_t j = 0; j < tape.pairs.size(); ++j) {
    const auto [t, i] = tape.pairs[j];
    const auto& expert = params.experts[i];
    auto& ge = g.params.experts[i];
    const auto up = d_hidden.row(t);
    const auto& y = tape.out[j];
    const auto& pre = tape.pre[j];
    const double gate = tape.mask.gate(t, i);

    double dg = 0.0;
    for (std::size_t d = 0; d < y.size(); ++d) {
      dg += up[d] * y[d];
      dy[d] = gate * up[d];
    }
    d_gate(t, i) = dg;

    for (std::size_t h = 0; h < f; ++h) act[h] = silu(pre[h]);
    outer_acc(ge.w_out, dy, act);
    for (std::size_t d = 0; d < dy.size(); ++d) ge.b_out[d] += dy[d];

    std::fill(du.begin(), du.end(), 0.0);
    matvec_transposed_acc(expert.w_out, dy, du);
    for (std::size_t h = 0; h < f; ++h) du[h] *= silu_grad(pre[h]);
    outer_acc(ge.w_in, du, tape.input.row(t));
    for (std::size_t h = 0; h < f; ++h) ge.b_in[h] += du[h];
    matvec_transposed_acc(expert.w_in, du, g.d_inputs.row(t));
  }

  std::vector<double> ds(n), dz(n);
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto s = tape.scores.row(t);
    std::fill(ds.begin(), ds.end(), 0.0);
    if (tape.renormalized) {
      // g_i = s_i / S over the selected set.
      double sel_sum = 0.0;
      double weighted = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!tape.mask.selected(t, i)) continue;
        sel_sum += s[i];
        weighted += tape.mask.gate(t, i) * d_gate(t, i);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (tape.mask.selected(t, i)) ds[i] = (d_gate(t, i) - weighted) / sel_sum;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) ds[i] = d_gate(t, i);
    }
    if (has_extra) {
      for (std::size_t i = 0; i < n; ++i) ds[i] += d_scores_extra(t, i);
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += s[i] * ds[i];
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      dz[i] = s[i] * (ds[i] - dot);
      any = any || dz[i] != 0.0;
    }
    if (!any) continue;
    outer_acc(g.params.router, dz, tape.input.row(t));
    matvec_transposed_acc(params.router, dz, g.d_inputs.row(t));
  }
  return g;
}

double load_balance_loss(const RoutingMask& mask, const Matrix& scores) {
  const std::size_t tokens = scores.rows();
  const std::size_t n = scores.cols();
  if (mask.tokens() != tokens || mask.experts() != n) {
    throw InvalidInput("load balance loss: shape mismatch");
  }
  if (mask.total() == 0 || tokens == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t routed = 0;
    double mean_score = 0.0;
    for (std::size_t t = 0; t < tokens; ++t) {
      routed += mask.selected(t, i) ? 1 : 0;
      mean_score += scores(t, i);
    }
    mean_score /= static_cast<double>(tokens);
    loss += static_cast<double>(routed) / static_cast<double>(mask.total()) *
            mean_score;
  }
  return static_cast<double>(n) * loss;
}

double load_balance_loss(const RoutingMask& mask, const ScoreMatrix& scores) {
  return load_balance_loss(mask, scores.values());
}

Matrix load_balance_score_gradient(const RoutingMask& mask, const Matrix& scores) {
  const std::size_t tokens = scores.rows();
  const std::size_t n = scores.cols();
  Matrix grad(tokens, n);
  if (mask.total() == 0) return grad;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t routed = 0;
    for (std::size_t t = 0; t < tokens; ++t) routed += mask.selected(t, i) ? 1 : 0;
    const double v = static_cast<double>(n) * static_cast<double>(routed) /
                     static_cast<double>(mask.total()) /
                     static_cast<double>(tokens);
    for (std::size_t t = 0; t < tokens; ++t) grad(t, i) = v;
  }
  return grad;
}

void add_scaled(MoeLayerParams& into, const MoeLayerParams& from, double alpha) {
  std::vector<double> flat;
  for_each_parameter(from, [&](const double& v) { flat.push_back(v); });
  std::size_t j = 0;
  for_each_parameter(into, [&](double& v) { v += alpha * flat[j++]; });
}

}  // namespace moelab
