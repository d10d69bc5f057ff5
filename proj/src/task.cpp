#include "moelab/task.hpp"

#include <numeric>

#include "moelab/error.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {
constexpr std::uint64_t kCorpusStreamBase = std::uint64_t{1} << 48;
}

SyntheticTask::SyntheticTask(SyntheticTaskConfig config) : config_(config) {
  if (config_.vocab < 4 || config_.vocab % 2 != 0) {
    throw InvalidInput("task vocabulary must be even and at least 4");
  }
  if (config_.seq_len < 2) throw InvalidInput("task sequences need T >= 2");
}

std::size_t SyntheticTask::target_for(std::size_t token, std::size_t previous,
                                      Difficulty difficulty) const {
  if (difficulty == Difficulty::kEasy) return (token + 1) % config_.vocab;
  return (token + 3 * previous) % config_.vocab;
}

TaskSample SyntheticTask::sample(std::uint64_t stream) const {
  const std::size_t T = config_.seq_len;
  const std::size_t V = config_.vocab;
  const std::size_t half = V / 2;
  Rng rng(mix_seed(config_.seed, stream));

  TaskSample s;
  s.difficulty.assign(T, Difficulty::kEasy);
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  for (std::size_t j = 0; j < T / 2; ++j) s.difficulty[order[j]] = Difficulty::kHard;

  s.tokens.resize(T);
  s.targets.resize(T);
  s.inputs = Matrix(T, 2 * V);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t offset = s.difficulty[t] == Difficulty::kHard ? half : 0;
    s.tokens[t] = offset + rng.below(half);
    const std::size_t prev = t == 0 ? 0 : s.tokens[t - 1];
    s.targets[t] = target_for(s.tokens[t], prev, s.difficulty[t]);
    s.inputs(t, s.tokens[t]) = 1.0;
    if (t > 0) s.inputs(t, V + prev) = 1.0;
  }
  return s;
}

std::vector<TaskSample> SyntheticTask::batch(std::size_t step,
                                             std::size_t batch_size) const {
  std::vector<TaskSample> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    out.push_back(sample(static_cast<std::uint64_t>(step) * batch_size + b));
  }
  return out;
}

std::vector<TaskSample> SyntheticTask::corpus(std::size_t count,
                                              std::uint64_t offset) const {
  std::vector<TaskSample> out;
  out.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    out.push_back(sample(kCorpusStreamBase + offset + j));
  }
  return out;
}

}  // namespace moelab
