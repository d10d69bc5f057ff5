#include "moelab/train.hpp"

#include <cmath>

#include <fmt/format.h>

#include "moelab/backward.hpp"
#include "moelab/error.hpp"

namespace moelab {
namespace {

double mean_router_entropy(const std::vector<SequenceTrace>& traces,
                           std::size_t n_layers) {
  double sum = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<Matrix> probs;
    probs.reserve(traces.size());
    for (const auto& tr : traces) probs.push_back(tr.layers[l].scores);
    sum += routing_entropy(probs, l).normalized_entropy;
  }
  return sum / static_cast<double>(n_layers);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(aux_loss_coefficient >= 0.0)) {
    throw InvalidInput("aux loss coefficient must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
}

TrainResult train_from(const SyntheticTask& task, ToyLm model,
                       const TrainConfig& config) {
  config.validate();
  if (model.dims.d_model != task.input_dim() ||
      model.dims.vocab != task.config().vocab) {
    throw InvalidInput("model dims do not match the task");
  }
  config.routing.budget.validate(model.dims.n_experts);

  TrainResult result;
  result.trace.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = task.batch(step, config.batch_size);
    std::vector<Matrix> inputs;
    std::vector<std::vector<std::size_t>> targets;
    for (const auto& s : batch) {
      inputs.push_back(s.inputs);
      targets.push_back(s.targets);
    }
    std::vector<SequenceTrace> traces;
    try {
      traces = forward_batch(model, inputs, config.routing);
    } catch (const InvalidInput& e) {
      // Finite parameters on one-hot inputs only fail here through overflow.
      throw TrainingDivergence(step, fmt::format("overflow at step {}: {}", step, e.what()));
    }
    const auto loss = batch_loss(traces, targets, config.aux_loss_coefficient);
    if (!std::isfinite(loss.total)) {
      throw TrainingDivergence(
          step, fmt::format("non-finite loss at step {}", step));
    }

    MetricsRow row;
    row.step = step;
    row.task_loss = loss.task;
    row.aux_loss = loss.aux;
    row.total_loss = loss.total;
    row.mean_experts_per_token =
        static_cast<double>(loss.expert_invocations) /
        static_cast<double>(loss.tokens * model.dims.n_layers);
    row.entropy_normalized = mean_router_entropy(traces, model.dims.n_layers);
    result.trace.push_back(row);

    const auto grads =
        batch_gradients(model, traces, targets, config.aux_loss_coefficient);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      add_scaled(model.layers[l], grads[l], -config.learning_rate);
      bool finite = true;
      for_each_parameter(model.layers[l], [&](double v) { finite = finite && std::isfinite(v); });
      if (!finite) {
        throw TrainingDivergence(
            step, fmt::format("non-finite parameters after step {}", step));
      }
    }
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(const SyntheticTask& task, const ModelDims& dims,
                  const TrainConfig& config) {
  return train_from(task, init_model(dims, config.seed, config.router_scale), config);
}

EvalResult evaluate(const ToyLm& model, std::span<const TaskSample> corpus,
                    const RoutingOptions& routing, std::size_t batch_size) {
  if (corpus.empty()) throw InvalidInput("empty evaluation corpus");
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
  const std::size_t n_layers = model.dims.n_layers;
  EvalResult out;
  out.masks.resize(n_layers);
  out.scores.resize(n_layers);

  double ce = 0.0, ce_hard = 0.0, ce_easy = 0.0;
  std::size_t tokens = 0, hard = 0, easy = 0;
  double experts_all = 0.0, experts_hard = 0.0, experts_easy = 0.0;

  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    const std::size_t end = std::min(corpus.size(), start + batch_size);
    std::vector<Matrix> inputs;
    for (std::size_t s = start; s < end; ++s) inputs.push_back(corpus[s].inputs);
    const auto traces = forward_batch(model, inputs, routing);
    for (std::size_t s = start; s < end; ++s) {
      const auto& tr = traces[s - start];
      const auto& sample = corpus[s];
      for (std::size_t t = 0; t < sample.targets.size(); ++t) {
        const double nll = -std::log(tr.probs(t, sample.targets[t]));
        double experts = 0.0;
        for (const auto& layer : tr.layers) {
          experts += static_cast<double>(layer.mask.counts()[t]);
        }
        experts /= static_cast<double>(n_layers);
        ce += nll;
        experts_all += experts;
        ++tokens;
        const bool is_hard = sample.difficulty[t] == Difficulty::kHard;
        (is_hard ? ce_hard : ce_easy) += nll;
        (is_hard ? experts_hard : experts_easy) += experts;
        ++(is_hard ? hard : easy);

        TokenEntropyRecord rec;
        rec.token = t;
        rec.entropy = entropy(tr.probs.row(t));
        rec.activated_experts = tr.layers.front().mask.counts()[t];
        rec.difficulty = sample.difficulty[t];
        out.token_records.push_back(rec);
      }
      for (std::size_t l = 0; l < n_layers; ++l) {
        out.masks[l].push_back(tr.layers[l].mask);
        out.scores[l].push_back(tr.layers[l].scores);
      }
    }
  }
  auto ratio = [](double a, std::size_t b) {
    return b == 0 ? 0.0 : a / static_cast<double>(b);
  };
  out.task_loss = ratio(ce, tokens);
  out.hard_loss = ratio(ce_hard, hard);
  out.easy_loss = ratio(ce_easy, easy);
  out.mean_experts_per_token = ratio(experts_all, tokens);
  out.mean_experts_hard = ratio(experts_hard, hard);
  out.mean_experts_easy = ratio(experts_easy, easy);
  return out;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& trace) {
  std::string out =
      "step,task_loss,aux_loss,total_loss,mean_experts_per_token,entropy_normalized\n";
  for (const auto& r : trace) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step,
                       r.task_loss, r.aux_loss, r.total_loss,
                       r.mean_experts_per_token, r.entropy_normalized);
  }
  return out;
}

}  // namespace moelab
