#include <gtest/gtest.h>

#include <set>

#include "moelab/error.hpp"
#include "moelab/experiment.hpp"
#include "moelab/model.hpp"
#include "moelab/task.hpp"
#include "moelab/train.hpp"

namespace moelab {
namespace {

ExperimentConfig small_config(std::size_t steps) {
  auto c = default_experiment_config();
  c.train.steps = steps;
  c.task.seq_len = 8;
  c.train.batch_size = 4;
  return c;
}

TEST(SyntheticTaskTest, TargetsFollowRules) {
  SyntheticTask task({3, 32, 16});
  const auto s = task.sample(0);
  std::size_t hard = 0;
  for (std::size_t t = 0; t < 32; ++t) {
    const std::size_t prev = t == 0 ? 0 : s.tokens[t - 1];
    const bool is_hard = s.tokens[t] >= 8;
    EXPECT_EQ(s.difficulty[t] == Difficulty::kHard, is_hard);
    EXPECT_EQ(s.targets[t], is_hard ? (s.tokens[t] + 3 * prev) % 16 : (s.tokens[t] + 1) % 16);
    EXPECT_EQ(s.targets[t], task.target_for(s.tokens[t], prev, s.difficulty[t]));
    hard += is_hard;
  }
  EXPECT_EQ(hard, 16u);
}

TEST(SyntheticTaskTest, InputsAreTwoOneHots) {
  SyntheticTask task({4, 10, 8});
  const auto s = task.sample(2);
  ASSERT_EQ(s.inputs.cols(), 16u);
  for (std::size_t t = 0; t < 10; ++t) {
    double sum = 0.0;
    for (double v : s.inputs.row(t)) sum += v;
    EXPECT_DOUBLE_EQ(s.inputs(t, s.tokens[t]), 1.0);
    if (t > 0) EXPECT_DOUBLE_EQ(s.inputs(t, 8 + s.tokens[t - 1]), 1.0);
    EXPECT_DOUBLE_EQ(sum, t == 0 ? 1.0 : 2.0);
  }
}

TEST(SyntheticTaskTest, DeterministicAndDisjoint) {
  SyntheticTask task({5, 16, 16});
  EXPECT_EQ(task.sample(7).tokens, task.sample(7).tokens);
  std::set<std::vector<std::size_t>> train_seqs;
  for (std::size_t step = 0; step < 20; ++step) {
    for (const auto& s : task.batch(step, 4)) train_seqs.insert(s.tokens);
  }
  for (const auto& s : task.corpus(32)) EXPECT_FALSE(train_seqs.contains(s.tokens));
}

TEST(Training, ZeroStepsReturnsInitialization) {
  const auto c = small_config(0);
  const auto r = train(SyntheticTask(c.task), c.model, c.train);
  EXPECT_EQ(r.model, init_model(c.model, c.train.seed, c.train.router_scale));
  EXPECT_TRUE(r.trace.empty());
}

TEST(Training, BitIdenticalTraces) {
  const auto c = small_config(30);
  const SyntheticTask task(c.task);
  const auto a = train(task, c.model, c.train);
  const auto b = train(task, c.model, c.train);
  EXPECT_EQ(metrics_to_csv(a.trace), metrics_to_csv(b.trace));
  EXPECT_EQ(a.model, b.model);
}

TEST(Training, LossDecreases) {
  const auto c = small_config(300);
  const auto r = train(SyntheticTask(c.task), c.model, c.train);
  EXPECT_LT(r.trace.back().task_loss, r.trace.front().task_loss);
}

// With collapsed bounds the two strategies route identically, so any
// difference in the traces would come from the data or the initialization.
TEST(Training, StrategiesShareTaskStream) {
  auto c = small_config(20);
  const SyntheticTask task(c.task);
  c.train.routing = {Strategy::kTopK, BudgetConfig{2, 2, 2}, false};
  const auto a = train(task, c.model, c.train);
  c.train.routing.strategy = Strategy::kSeqTopKBounded;
  const auto b = train(task, c.model, c.train);
  EXPECT_EQ(metrics_to_csv(a.trace), metrics_to_csv(b.trace));
}

TEST(Training, DivergenceReportsStep) {
  auto c = small_config(50);
  c.train.learning_rate = 1e200;
  try {
    train(SyntheticTask(c.task), c.model, c.train);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_LT(e.step(), 50u);
  }
}

TEST(Training, InvalidConfigRejected) {
  auto c = small_config(1);
  c.train.learning_rate = 0.0;
  EXPECT_THROW(c.train.validate(), InvalidInput);
  c = small_config(1);
  c.train.aux_loss_coefficient = -1.0;
  EXPECT_THROW(c.train.validate(), InvalidInput);
}

TEST(Evaluate, BoundedCountsWithinBounds) {
  const auto c = small_config(20);
  const SyntheticTask task(c.task);
  const auto r = train(task, c.model, c.train);
  const auto corpus = task.corpus(8);
  const auto ev = evaluate(r.model, corpus, c.train.routing);
  EXPECT_NEAR(ev.mean_experts_per_token, 2.0, 1e-12);
  for (const auto& rec : ev.token_records) {
    EXPECT_GE(rec.activated_experts, 1u);
    EXPECT_LE(rec.activated_experts, 4u);
  }
}

TEST(OnlineDecoderTest, MatchesBatchOnlineRouting) {
  const ModelDims dims{16, 32, 4, 8, 2, 4.0};
  const auto model = init_model(dims, 3, 2.0);
  const SyntheticTask task({3, 12, 16});
  const auto s = task.sample(0);
  const auto b = BudgetConfig::with_defaults(2, 8);
  OnlineDecoder dec(model, b);
  std::vector<std::vector<double>> probs;
  for (std::size_t t = 0; t < 12; ++t) probs.push_back(dec.step(s.inputs.row(t)));
  const std::vector<Matrix> inputs{s.inputs};
  const auto traces = forward_batch(model, inputs, {Strategy::kOnlineSeqTopK, b, false});
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(dec.layer_counts()[l], traces[0].layers[l].mask.counts());
  }
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t v = 0; v < 16; ++v) EXPECT_NEAR(probs[t][v], traces[0].probs(t, v), 1e-12);
  }
}

TEST(Checkpoint, LosslessRoundTrip) {
  const auto c = small_config(10);
  const auto r = train(SyntheticTask(c.task), c.model, c.train);
  std::string meta;
  const auto text = checkpoint_to_json(r.model, checkpoint_meta_json(c));
  const auto loaded = checkpoint_from_json(text, &meta);
  EXPECT_EQ(loaded, r.model);
  EXPECT_EQ(config_from_checkpoint_meta(meta, loaded.dims), c);
  EXPECT_EQ(checkpoint_to_json(loaded, meta), text);
}

TEST(Checkpoint, RejectsForeignDocuments) {
  EXPECT_THROW(checkpoint_from_json("{\"format\":\"x\",\"version\":1}"), Error);
  EXPECT_THROW(checkpoint_from_json("[1,2"), Error);
}

TEST(ExperimentConfigTest, RoundTripIsByteIdentical) {
  auto c = default_experiment_config();
  c.train.routing = {Strategy::kOnlineSeqTopK, BudgetConfig{3, 2, 5}, true};
  c.train.learning_rate = 0.123456789;
  const auto text = config_to_json(c);
  const auto parsed = config_from_json(text);
  EXPECT_EQ(parsed, c);
  EXPECT_EQ(config_to_json(parsed), text);
}

TEST(ExperimentConfigTest, ParseErrorHasPosition) {
  try {
    config_from_json("{\n  \"train\": {\n    \"steps\": ,\n  }\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_GT(e.column(), 1u);
  }
}

TEST(ExperimentConfigTest, ValidationCatchesMismatch) {
  auto c = default_experiment_config();
  c.model.vocab = 8;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = default_experiment_config();
  c.train.routing.budget = {2, 1, 9};
  EXPECT_THROW(c.validate(), BudgetInfeasible);
}

}  // namespace
}  // namespace moelab
