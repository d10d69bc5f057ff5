#pragma once

#include <cstddef>
#include <vector>

#include "moelab/matrix.hpp"
#include "moelab/moe_layer.hpp"
#include "moelab/routing.hpp"

namespace moelab {

// Everything the backward pass needs from one layer's forward evaluation.
// The routing mask is a recorded constant: selection is not differentiated.
struct LayerTape {
  Matrix input;                           // T x D
  Matrix scores;                          // T x N
  RoutingMask mask;
  bool renormalized = false;
  std::vector<TokenExpert> pairs;         // selected pairs, token-major
  std::vector<std::vector<double>> pre;   // W_in x + b_in per pair
  std::vector<std::vector<double>> out;   // E_i(x_t) per pair
};

struct RecordedForward {
  LayerOutput output;
  LayerTape tape;
};

// Forward pass with a caller-supplied mask, recording the tape. The mask's
// gates must be derived from `scores` (raw or renormalized).
RecordedForward moe_forward_recorded(const MoeLayerParams& params,
                                     const Matrix& inputs,
                                     const ScoreMatrix& scores,
                                     RoutingMask mask, bool renormalized);

struct LayerGradients {
  MoeLayerParams params;  // same shapes as the layer
  Matrix d_inputs;        // T x D
};

// Exact reverse-mode gradients of the recorded computation given dL/dh.
// `d_scores_extra`, if non-empty, is added to dL/ds before the softmax
// Jacobian (used for the auxiliary loss).
LayerGradients moe_backward(const MoeLayerParams& params, const LayerTape& tape,
                            const Matrix& d_hidden,
                            const Matrix& d_scores_extra = {});

// Switch-style balance loss N * sum_i f_i * P_i, where f_i is the fraction of
// selected entries on expert i and P_i the mean router score of expert i.
// Equals 1 at uniform f and P.
double load_balance_loss(const RoutingMask& mask, const ScoreMatrix& scores);
double load_balance_loss(const RoutingMask& mask, const Matrix& scores);

// dLoss/dScores of load_balance_loss with the mask held constant:
// N * f_i / T for every token.
Matrix load_balance_score_gradient(const RoutingMask& mask, const Matrix& scores);

// In-place helpers on parameter-shaped containers.
void add_scaled(MoeLayerParams& into, const MoeLayerParams& from, double alpha);
// Visits every scalar parameter in a fixed order (router, then each expert's
// w_in, b_in, w_out, b_out).
template <typename Params, typename Fn>
void for_each_parameter(Params& p, Fn&& fn) {
  for (auto& v : p.router.data()) fn(v);
  for (auto& e : p.experts) {
    for (auto& v : e.w_in.data()) fn(v);
    for (auto& v : e.b_in) fn(v);
    for (auto& v : e.w_out.data()) fn(v);
    for (auto& v : e.b_out) fn(v);
  }
}

}  // namespace moelab
