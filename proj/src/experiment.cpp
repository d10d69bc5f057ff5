#include "moelab/experiment.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moelab/error.hpp"

namespace moelab {
namespace {

using nlohmann::json;

json budget_json(const BudgetConfig& b) {
  return {{"k", b.k_tok}, {"lower_bound", b.lower_bound}, {"upper_bound", b.upper_bound}};
}

BudgetConfig budget_from(const json& j, const BudgetConfig& fallback) {
  BudgetConfig b = fallback;
  b.k_tok = j.value("k", b.k_tok);
  b.lower_bound = j.value("lower_bound", b.lower_bound);
  b.upper_bound = j.value("upper_bound", b.upper_bound);
  return b;
}

Strategy strategy_from(const json& j, Strategy fallback) {
  if (!j.contains("strategy")) return fallback;
  const auto name = j.at("strategy").get<std::string>();
  auto s = parse_strategy(name);
  if (!s) throw InvalidInput(fmt::format("unknown strategy '{}'", name));
  return *s;
}

json to_json_object(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"strategy", std::string(to_string(t.routing.strategy))},
      {"budget", budget_json(t.routing.budget)},
      {"renormalize_gates", t.routing.renormalize_gates},
      {"model",
       {{"vocab", m.vocab},
        {"d_model", m.d_model},
        {"d_hidden", m.d_hidden},
        {"n_experts", m.n_experts},
        {"n_layers", m.n_layers},
        {"head_scale", m.head_scale}}},
      {"task", {{"seed", c.task.seed}, {"seq_len", c.task.seq_len}, {"vocab", c.task.vocab}}},
      {"train",
       {{"steps", t.steps},
        {"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"aux_loss_coefficient", t.aux_loss_coefficient},
        {"seed", t.seed},
        {"router_scale", t.router_scale}}},
      {"eval_sequences", c.eval_sequences},
      {"output_dir", c.output_dir},
  };
}

ExperimentConfig from_json_object(const json& j) {
  ExperimentConfig c;
  c.train.routing.strategy = strategy_from(j, c.train.routing.strategy);
  if (j.contains("budget")) {
    c.train.routing.budget = budget_from(j.at("budget"), c.train.routing.budget);
  }
  c.train.routing.renormalize_gates =
      j.value("renormalize_gates", c.train.routing.renormalize_gates);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.vocab = m.value("vocab", c.model.vocab);
    c.model.d_model = m.value("d_model", c.model.d_model);
    c.model.d_hidden = m.value("d_hidden", c.model.d_hidden);
    c.model.n_experts = m.value("n_experts", c.model.n_experts);
    c.model.n_layers = m.value("n_layers", c.model.n_layers);
    c.model.head_scale = m.value("head_scale", c.model.head_scale);
  }
  if (j.contains("task")) {
    const auto& t = j.at("task");
    c.task.seed = t.value("seed", c.task.seed);
    c.task.seq_len = t.value("seq_len", c.task.seq_len);
    c.task.vocab = t.value("vocab", c.task.vocab);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.steps = t.value("steps", c.train.steps);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.aux_loss_coefficient =
        t.value("aux_loss_coefficient", c.train.aux_loss_coefficient);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.router_scale = t.value("router_scale", c.train.router_scale);
  }
  c.eval_sequences = j.value("eval_sequences", c.eval_sequences);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  SyntheticTask check(task);
  if (model.vocab != task.vocab || model.d_model != check.input_dim()) {
    throw InvalidInput(fmt::format(
        "model (V={}, D={}) does not fit task (V={}, needs D={})", model.vocab,
        model.d_model, task.vocab, check.input_dim()));
  }
  train.validate();
  train.routing.budget.validate(model.n_experts);
  if (eval_sequences == 0) throw InvalidInput("eval_sequences must be positive");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.model = ModelDims{16, 32, 4, 8, 1, 4.0};
  c.task = SyntheticTaskConfig{11, 32, 16};
  c.train.steps = 2000;
  c.train.learning_rate = 0.5;
  c.train.batch_size = 8;
  c.train.aux_loss_coefficient = 0.01;
  c.train.seed = 11;
  c.train.routing = RoutingOptions{Strategy::kSeqTopKBounded,
                                   BudgetConfig::with_defaults(2, 8), false};
  return c;
}

std::string config_to_json(const ExperimentConfig& config) {
  return to_json_object(config).dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line/column
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(line, col, e.what());
  }
  try {
    return from_json_object(j);
  } catch (const json::exception& e) {
    throw InvalidInput(fmt::format("bad config: {}", e.what()));
  }
}

std::string checkpoint_meta_json(const ExperimentConfig& config) {
  return to_json_object(config).dump();
}

ExperimentConfig config_from_checkpoint_meta(const std::string& meta_json,
                                             const ModelDims& dims) {
  auto c = config_from_json(meta_json);
  c.model = dims;
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput(fmt::format("cannot write {}", path.string()));
  out << text;
}

TrainArtifacts run_training_experiment(const ExperimentConfig& config,
                                       const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  SyntheticTask task(config.task);
  TrainArtifacts art;
  art.result = train(task, config.model, config.train);
  art.checkpoint = out_dir / "checkpoint.json";
  art.metrics = out_dir / "metrics.csv";
  art.config = out_dir / "config.json";
  write_file(art.checkpoint,
             checkpoint_to_json(art.result.model, checkpoint_meta_json(config)));
  write_file(art.metrics, metrics_to_csv(art.result.trace));
  write_file(art.config, config_to_json(config));
  return art;
}

}  // namespace moelab
