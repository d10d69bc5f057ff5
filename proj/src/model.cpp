#include "moelab/model.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moelab/error.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

constexpr const char* kCheckpointFormat = "moelab.checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void ModelDims::validate() const {
  if (vocab < 2 || d_model < vocab || d_hidden == 0 || n_experts == 0 ||
      n_layers == 0 || !std::isfinite(head_scale)) {
    throw InvalidInput(fmt::format(
        "bad model dims V={} D={} F={} N={} L={}", vocab, d_model, d_hidden,
        n_experts, n_layers));
  }
}

ToyLm init_model(const ModelDims& dims, std::uint64_t seed, double router_scale) {
  dims.validate();
  ToyLm model;
  model.dims = dims;
  model.init_seed = seed;
  for (std::size_t l = 0; l < dims.n_layers; ++l) {
    model.layers.push_back(init_layer(dims.d_model, dims.d_hidden, dims.n_experts,
                                      mix_seed(seed, l), router_scale));
  }
  return model;
}

std::vector<double> head_probabilities(const ModelDims& dims,
                                       std::span<const double> hidden) {
  std::vector<double> logits(dims.vocab);
  for (std::size_t v = 0; v < dims.vocab; ++v) logits[v] = dims.head_scale * hidden[v];
  return softmax(logits);
}

std::vector<SequenceTrace> forward_batch(const ToyLm& model,
                                         std::span<const Matrix> inputs,
                                         const RoutingOptions& options) {
  std::vector<SequenceTrace> traces(inputs.size());
  std::vector<Matrix> current(inputs.begin(), inputs.end());
  for (const auto& layer : model.layers) {
    std::vector<ScoreMatrix> scores;
    scores.reserve(current.size());
    for (const auto& x : current) scores.push_back(router_scores(layer, x));
    auto masks = route_batch(scores, options);
    for (std::size_t b = 0; b < current.size(); ++b) {
      auto rec = moe_forward_recorded(layer, current[b], scores[b],
                                      std::move(masks[b]),
                                      options.renormalize_gates);
      current[b] = std::move(rec.output.hidden);
      traces[b].layers.push_back(std::move(rec.tape));
    }
  }
  for (std::size_t b = 0; b < current.size(); ++b) {
    auto& tr = traces[b];
    tr.probs = Matrix(current[b].rows(), model.dims.vocab);
    for (std::size_t t = 0; t < current[b].rows(); ++t) {
      auto p = head_probabilities(model.dims, current[b].row(t));
      std::copy(p.begin(), p.end(), tr.probs.row(t).begin());
    }
    tr.hidden = std::move(current[b]);
  }
  return traces;
}

LossBreakdown batch_loss(const std::vector<SequenceTrace>& traces,
                         std::span<const std::vector<std::size_t>> targets,
                         double aux_coefficient) {
  if (traces.size() != targets.size()) {
    throw InvalidInput("batch loss: traces and targets differ in length");
  }
  LossBreakdown loss;
  double ce = 0.0;
  for (std::size_t b = 0; b < traces.size(); ++b) {
    const auto& tr = traces[b];
    if (targets[b].size() != tr.probs.rows()) {
      throw InvalidInput("batch loss: target length mismatch");
    }
    for (std::size_t t = 0; t < targets[b].size(); ++t) {
      ce -= std::log(tr.probs(t, targets[b][t]));
    }
    loss.tokens += targets[b].size();
    for (const auto& layer : tr.layers) {
      loss.aux += load_balance_loss(layer.mask, layer.scores);
      loss.expert_invocations += layer.mask.total();
    }
  }
  loss.task = ce / static_cast<double>(loss.tokens);
  loss.aux /= static_cast<double>(traces.size());
  loss.total = loss.task + aux_coefficient * loss.aux;
  return loss;
}

std::vector<MoeLayerParams> batch_gradients(
    const ToyLm& model, const std::vector<SequenceTrace>& traces,
    std::span<const std::vector<std::size_t>> targets, double aux_coefficient) {
  const auto& dims = model.dims;
  std::vector<MoeLayerParams> grads;
  for (std::size_t l = 0; l < dims.n_layers; ++l) {
    grads.push_back(MoeLayerParams::zeros(dims.d_model, dims.d_hidden, dims.n_experts));
  }
  std::size_t total_tokens = 0;
  for (const auto& t : targets) total_tokens += t.size();
  const double token_scale = 1.0 / static_cast<double>(total_tokens);
  const double seq_scale = aux_coefficient / static_cast<double>(traces.size());

  // Fixed reduction order: sequences in batch order, layers top-down.
  for (std::size_t b = 0; b < traces.size(); ++b) {
    const auto& tr = traces[b];
    Matrix upstream(tr.hidden.rows(), dims.d_model);
    for (std::size_t t = 0; t < tr.hidden.rows(); ++t) {
      for (std::size_t v = 0; v < dims.vocab; ++v) {
        const double onehot = v == targets[b][t] ? 1.0 : 0.0;
        upstream(t, v) = dims.head_scale * (tr.probs(t, v) - onehot) * token_scale;
      }
    }
    for (std::size_t l = dims.n_layers; l-- > 0;) {
      const auto& tape = tr.layers[l];
      Matrix extra;
      if (aux_coefficient != 0.0) {
        extra = load_balance_score_gradient(tape.mask, tape.scores);
        for (double& v : extra.data()) v *= seq_scale;
      }
      auto g = moe_backward(model.layers[l], tape, upstream, extra);
      add_scaled(grads[l], g.params, 1.0);
      upstream = std::move(g.d_inputs);
    }
  }
  return grads;
}

std::vector<std::vector<double>> token_logprob_shift(
    const ToyLm& model, const Matrix& inputs,
    std::span<const std::size_t> targets, std::span<const std::size_t> k_values,
    std::size_t reference_k) {
  const std::size_t n = model.dims.n_experts;
  auto check = [n](std::size_t k) {
    if (k < 1 || k > n) {
      throw BudgetInfeasible(fmt::format("k={} outside [1, {}]", k, n));
    }
  };
  check(reference_k);
  for (std::size_t k : k_values) check(k);
  if (targets.size() != inputs.rows()) throw InvalidInput("target length mismatch");

  auto target_probs = [&](std::size_t k) {
    RoutingOptions opt{Strategy::kTopK, BudgetConfig{k, 1, k}, false};
    const std::vector<Matrix> one{inputs};
    auto tr = forward_batch(model, one, opt);
    std::vector<double> p(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) p[t] = tr[0].probs(t, targets[t]);
    return p;
  };
  const auto ref = target_probs(reference_k);
  std::vector<std::vector<double>> out;
  for (std::size_t k : k_values) {
    auto p = target_probs(k);
    for (std::size_t t = 0; t < p.size(); ++t) p[t] -= ref[t];
    out.push_back(std::move(p));
  }
  return out;
}

OnlineDecoder::OnlineDecoder(const ToyLm& model, BudgetConfig budget,
                             bool renormalize_gates)
    : model_(&model), budget_(budget), renormalize_(renormalize_gates) {
  budget_.validate(model.dims.n_experts);
  for (std::size_t l = 0; l < model.dims.n_layers; ++l) {
    sessions_.emplace_back(model.dims.n_experts);
  }
  counts_.resize(model.dims.n_layers);
}

std::vector<double> OnlineDecoder::step(std::span<const double> input) {
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t l = 0; l < model_->layers.size(); ++l) {
    auto out = moe_forward_online(model_->layers[l], sessions_[l], x, budget_,
                                  renormalize_);
    counts_[l].push_back(out.routing.selected_experts.size());
    x = std::move(out.hidden);
  }
  return head_probabilities(model_->dims, x);
}

std::string checkpoint_to_json(const ToyLm& model, const std::string& meta_json) {
  using nlohmann::json;
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["init_seed"] = model.init_seed;
  const auto& d = model.dims;
  j["dims"] = {{"vocab", d.vocab},       {"d_model", d.d_model},
               {"d_hidden", d.d_hidden}, {"n_experts", d.n_experts},
               {"n_layers", d.n_layers}, {"head_scale", d.head_scale}};
  j["meta"] = json::parse(meta_json);
  auto tensors = json::array();
  auto put = [&](const std::string& name, std::vector<std::size_t> shape,
                 std::span<const double> data) {
    tensors.push_back({{"name", name},
                       {"shape", shape},
                       {"data", std::vector<double>(data.begin(), data.end())}});
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const auto prefix = fmt::format("layers.{}.", l);
    put(prefix + "router", {layer.router.rows(), layer.router.cols()},
        layer.router.data());
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
      const auto& e = layer.experts[i];
      const auto ep = fmt::format("{}experts.{}.", prefix, i);
      put(ep + "w_in", {e.w_in.rows(), e.w_in.cols()}, e.w_in.data());
      put(ep + "b_in", {e.b_in.size()}, e.b_in);
      put(ep + "w_out", {e.w_out.rows(), e.w_out.cols()}, e.w_out.data());
      put(ep + "b_out", {e.b_out.size()}, e.b_out);
    }
  }
  j["tensors"] = std::move(tensors);
  return j.dump(1);
}

ToyLm checkpoint_from_json(const std::string& text, std::string* meta_json) {
  using nlohmann::json;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw InvalidInput("not a moelab checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw InvalidInput("unsupported checkpoint version");
    }
    const auto& jd = j.at("dims");
    ModelDims d;
    d.vocab = jd.at("vocab").get<std::size_t>();
    d.d_model = jd.at("d_model").get<std::size_t>();
    d.d_hidden = jd.at("d_hidden").get<std::size_t>();
    d.n_experts = jd.at("n_experts").get<std::size_t>();
    d.n_layers = jd.at("n_layers").get<std::size_t>();
    d.head_scale = jd.at("head_scale").get<double>();
    d.validate();

    ToyLm model;
    model.dims = d;
    model.init_seed = j.at("init_seed").get<std::uint64_t>();
    for (std::size_t l = 0; l < d.n_layers; ++l) {
      model.layers.push_back(MoeLayerParams::zeros(d.d_model, d.d_hidden, d.n_experts));
    }

    const auto& tensors = j.at("tensors");
    std::size_t cursor = 0;
    auto take = [&](const std::string& name, std::vector<std::size_t> shape,
                    std::span<double> dst) {
      if (cursor >= tensors.size()) throw InvalidInput("checkpoint truncated");
      const auto& t = tensors[cursor++];
      if (t.at("name").get<std::string>() != name ||
          t.at("shape").get<std::vector<std::size_t>>() != shape) {
        throw InvalidInput(fmt::format("checkpoint tensor {} missing or misshapen", name));
      }
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != dst.size()) {
        throw InvalidInput(fmt::format("checkpoint tensor {} has wrong size", name));
      }
      std::copy(data.begin(), data.end(), dst.begin());
    };
    for (std::size_t l = 0; l < d.n_layers; ++l) {
      auto& layer = model.layers[l];
      const auto prefix = fmt::format("layers.{}.", l);
      take(prefix + "router", {d.n_experts, d.d_model}, layer.router.data());
      for (std::size_t i = 0; i < d.n_experts; ++i) {
        auto& e = layer.experts[i];
        const auto ep = fmt::format("{}experts.{}.", prefix, i);
        take(ep + "w_in", {d.d_hidden, d.d_model}, e.w_in.data());
        take(ep + "b_in", {d.d_hidden}, e.b_in);
        take(ep + "w_out", {d.d_model, d.d_hidden}, e.w_out.data());
        take(ep + "b_out", {d.d_model}, e.b_out);
      }
      layer.validate();
    }
    if (cursor != tensors.size()) throw InvalidInput("checkpoint has extra tensors");
    if (meta_json) *meta_json = j.value("meta", json::object()).dump();
    return model;
  } catch (const json::exception& e) {
    throw InvalidInput(fmt::format("bad checkpoint: {}", e.what()));
  }
}

}  // namespace moelab
