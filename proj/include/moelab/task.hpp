#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "moelab/matrix.hpp"

namespace moelab {

enum class Difficulty : std::uint8_t { kEasy = 0, kHard = 1 };

// One generated sequence. Inputs are 2V wide: a one-hot of the current token
// followed by a one-hot of the previous token (all zeros at t = 0).
struct TaskSample {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> targets;
  std::vector<Difficulty> difficulty;
  Matrix inputs;
};

struct SyntheticTaskConfig {
  std::uint64_t seed = 0;
  std::size_t seq_len = 32;
  std::size_t vocab = 16;  // even, >= 4

  bool operator==(const SyntheticTaskConfig&) const = default;
};

// Token ids below V/2 are easy: the target is the token itself, which the
// residual stream already carries. Ids at or above V/2 are hard: the target
// (a_t + 3 * a_{t-1}) mod V mixes the current and previous tokens and has to
// be computed by the experts. Every sequence holds exactly floor(T/2) hard
// positions, placed at random.
//
// Generation is a pure function of (seed, stream index): batch(step, B)
// draws streams step*B .. step*B+B-1 and corpus() draws from a disjoint
// range, so training and evaluation never share sequences.
class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticTaskConfig config);

  const SyntheticTaskConfig& config() const { return config_; }
  std::size_t input_dim() const { return 2 * config_.vocab; }

  TaskSample sample(std::uint64_t stream) const;
  std::vector<TaskSample> batch(std::size_t step, std::size_t batch_size) const;
  std::vector<TaskSample> corpus(std::size_t count, std::uint64_t offset = 0) const;

  std::size_t target_for(std::size_t token, std::size_t previous,
                         Difficulty difficulty) const;

 private:
  SyntheticTaskConfig config_;
};

}  // namespace moelab
