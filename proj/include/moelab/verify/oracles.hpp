#pragma once

// Independent reference computations used by the unit tests and the
// acceptance suite. Nothing in the core library depends on this header.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "moelab/matrix.hpp"
#include "moelab/moe_layer.hpp"
#include "moelab/routing.hpp"

namespace moelab::oracle {

// Softmax evaluated in long double with exact-sum normalization.
std::vector<long double> softmax_long_double(std::span<const double> logits);

// Maximum total selected score over every T x N binary mask with exactly
// T*k_tok entries and per-token counts in [lower, upper]. nullopt when no
// mask is feasible. Exponential: intended for T*N <= 16.
std::optional<double> brute_force_bounded_best(const ScoreMatrix& scores,
                                               const BudgetConfig& budget);

// Flat indices of the `count` largest values under (value desc, index asc),
// computed by a stable sort on value alone.
std::vector<std::size_t> reference_top_set(std::span<const double> values,
                                           std::size_t count);

// Evaluates every expert on every token, multiplies by the gate matrix
// (zero where unselected) and adds the residual.
Matrix dense_reference_forward(const MoeLayerParams& params, const Matrix& inputs,
                               const Matrix& gates);

// Central differences of `loss` with respect to every parameter of every
// layer, in for_each_parameter order.
std::vector<double> finite_difference_gradient(
    std::vector<MoeLayerParams>& layers,
    const std::function<double()>& loss, double step);

// Smallest |selected - unselected| score gap in a routed matrix.
double selection_gap(const Matrix& scores, const RoutingMask& mask);

}  // namespace moelab::oracle
