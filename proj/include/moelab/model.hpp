#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moelab/backward.hpp"
#include "moelab/matrix.hpp"
#include "moelab/moe_layer.hpp"

namespace moelab {

struct ModelDims {
  std::size_t vocab = 16;
  std::size_t d_model = 32;   // >= vocab
  std::size_t d_hidden = 4;
  std::size_t n_experts = 8;
  std::size_t n_layers = 1;
  double head_scale = 4.0;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

// A stack of MoE layers over fixed input features with a fixed read-out head:
// logits_v = head_scale * h[v] for v < vocab. Only the MoE layers train.
struct ToyLm {
  ModelDims dims;
  std::vector<MoeLayerParams> layers;
  std::uint64_t init_seed = 0;

  bool operator==(const ToyLm&) const = default;
};

// Layer l is init_layer(D, F, N, mix_seed(seed, l), router_scale).
ToyLm init_model(const ModelDims& dims, std::uint64_t seed,
                 double router_scale = 1.0);

struct SequenceTrace {
  std::vector<LayerTape> layers;
  Matrix hidden;  // final T x D
  Matrix probs;   // T x vocab
};

// Forward over a batch of sequences. Each layer routes the whole batch at
// once so BatchTopK sees every sequence; other strategies are per sequence.
std::vector<SequenceTrace> forward_batch(const ToyLm& model,
                                         std::span<const Matrix> inputs,
                                         const RoutingOptions& options);

struct LossBreakdown {
  double task = 0.0;   // mean cross-entropy per token
  double aux = 0.0;    // mean over sequences of the summed per-layer balance loss
  double total = 0.0;  // task + coefficient * aux
  std::size_t tokens = 0;
  std::size_t expert_invocations = 0;
};

LossBreakdown batch_loss(const std::vector<SequenceTrace>& traces,
                         std::span<const std::vector<std::size_t>> targets,
                         double aux_coefficient);

// Gradients of batch_loss with every routing mask held constant.
std::vector<MoeLayerParams> batch_gradients(
    const ToyLm& model, const std::vector<SequenceTrace>& traces,
    std::span<const std::vector<std::size_t>> targets, double aux_coefficient);

// P(target_t | x_<=t) under TopK routing with budget k, for each k in
// k_values, minus the same probability at reference_k. Result is indexed
// [k position][token].
std::vector<std::vector<double>> token_logprob_shift(
    const ToyLm& model, const Matrix& inputs,
    std::span<const std::size_t> targets, std::span<const std::size_t> k_values,
    std::size_t reference_k);

// Token-by-token decoding with one Expert Cache per layer.
class OnlineDecoder {
 public:
  OnlineDecoder(const ToyLm& model, BudgetConfig budget,
                bool renormalize_gates = false);

  // Returns the vocabulary distribution for the new token.
  std::vector<double> step(std::span<const double> input);

  const std::vector<OnlineSession>& sessions() const { return sessions_; }
  const std::vector<std::vector<std::size_t>>& layer_counts() const {
    return counts_;
  }

 private:
  const ToyLm* model_;
  BudgetConfig budget_;
  bool renormalize_;
  std::vector<OnlineSession> sessions_;
  std::vector<std::vector<std::size_t>> counts_;  // [layer][token]
};

std::vector<double> head_probabilities(const ModelDims& dims,
                                       std::span<const double> hidden);

// Checkpoint: JSON object
//   {"format":"moelab.checkpoint","version":1,"init_seed":S,
//    "dims":{...},"meta":{...},
//    "tensors":[{"name":"layers.0.router","shape":[N,D],"data":[...]}, ...]}
// Tensor order per layer: router, then experts.<i>.{w_in,b_in,w_out,b_out}.
// Doubles are written in shortest round-trip form, so save/load is lossless.
std::string checkpoint_to_json(const ToyLm& model, const std::string& meta_json = "{}");
ToyLm checkpoint_from_json(const std::string& text, std::string* meta_json = nullptr);

}  // namespace moelab
