#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "moelab/model.hpp"
#include "moelab/task.hpp"
#include "moelab/train.hpp"

namespace moelab {

// Everything needed to reproduce one training run. Serialized as JSON with
// sorted keys; serialize -> parse -> serialize is byte-identical.
struct ExperimentConfig {
  ModelDims model;
  SyntheticTaskConfig task;
  TrainConfig train;  // train.routing carries strategy, budget and gate mode
  std::size_t eval_sequences = 64;
  std::string output_dir = "out";

  // Throws InvalidInput / BudgetInfeasible if the pieces do not fit together.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// The configuration the soft end-to-end checks run with.
ExperimentConfig default_experiment_config();

std::string config_to_json(const ExperimentConfig& config);
// Missing keys take their defaults. Throws ParseError on malformed JSON and
// InvalidInput on unknown strategies or wrong types.
ExperimentConfig config_from_json(const std::string& text);

// Checkpoint metadata recorded next to the tensors so analysis can rebuild
// the routing setup and the task.
std::string checkpoint_meta_json(const ExperimentConfig& config);
ExperimentConfig config_from_checkpoint_meta(const std::string& meta_json,
                                             const ModelDims& dims);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::filesystem::path config;
  TrainResult result;
};

// Trains per config and writes checkpoint.json, metrics.csv and config.json
// into `out_dir` (created if needed).
TrainArtifacts run_training_experiment(const ExperimentConfig& config,
                                       const std::filesystem::path& out_dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace moelab
