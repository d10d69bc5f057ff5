#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moelab/analytics.hpp"
#include "moelab/model.hpp"
#include "moelab/moe_layer.hpp"
#include "moelab/task.hpp"

namespace moelab {

struct TrainConfig {
  std::size_t steps = 2000;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  double aux_loss_coefficient = 0.01;
  RoutingOptions routing{Strategy::kSeqTopKBounded, BudgetConfig{2, 1, 4}, false};
  std::uint64_t seed = 0;  // parameter initialization
  double router_scale = 1.0;

  // Throws InvalidInput on a negative coefficient or non-positive rate.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct MetricsRow {
  std::size_t step = 0;
  double task_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  double mean_experts_per_token = 0.0;
  double entropy_normalized = 0.0;  // router p_e entropy, mean over layers
};

struct TrainResult {
  ToyLm model;
  std::vector<MetricsRow> trace;
};

// Plain SGD on task loss + aux coefficient * balance loss. Batches come from
// task.batch(step, batch_size), so runs sharing a task seed see identical
// data whatever the routing strategy. Throws TrainingDivergence with the step
// index on a non-finite loss.
TrainResult train(const SyntheticTask& task, const ModelDims& dims,
                  const TrainConfig& config);

// Continues training an existing model.
TrainResult train_from(const SyntheticTask& task, ToyLm model,
                       const TrainConfig& config);

struct EvalResult {
  double task_loss = 0.0;
  double hard_loss = 0.0;
  double easy_loss = 0.0;
  double mean_experts_per_token = 0.0;  // averaged over layers
  double mean_experts_hard = 0.0;
  double mean_experts_easy = 0.0;
  std::vector<TokenEntropyRecord> token_records;  // first layer counts
  std::vector<std::vector<RoutingMask>> masks;    // [layer][sequence]
  std::vector<std::vector<Matrix>> scores;        // [layer][sequence]
};

// Evaluates a model on held-out sequences. Sequences are routed in groups of
// `batch_size` (only BatchTopK cares). Online routing replays the causal rule
// token by token.
EvalResult evaluate(const ToyLm& model, std::span<const TaskSample> corpus,
                    const RoutingOptions& routing, std::size_t batch_size = 1);

// step,task_loss,aux_loss,total_loss,mean_experts_per_token,entropy_normalized
std::string metrics_to_csv(const std::vector<MetricsRow>& trace);

}  // namespace moelab
