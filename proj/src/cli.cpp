#include "moelab/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "moelab/analytics.hpp"
#include "moelab/error.hpp"
#include "moelab/experiment.hpp"
#include "moelab/model.hpp"
#include "moelab/online.hpp"
#include "moelab/train.hpp"
#include "moelab/verify/acceptance.hpp"

namespace moelab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

struct BudgetFlags {
  std::optional<std::string> strategy;
  std::optional<std::size_t> k;
  std::optional<std::size_t> lower;
  std::optional<std::size_t> upper;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy,
                    "topk | seqtopk | seqtopk-bounded | batchtopk | online-seqtopk");
    cmd->add_option("--k", k, "Experts per token (sequence budget T*k)");
    cmd->add_option("--lower-bound", lower, "Minimum experts per token");
    cmd->add_option("--upper-bound", upper, "Maximum experts per token");
  }

  // Overlays the flags on `base`. When k moves and the bounds are not given,
  // they follow the defaults for the new k.
  RoutingOptions apply(RoutingOptions base, std::size_t n_experts) const {
    if (strategy) {
      const auto parsed = parse_strategy(*strategy);
      if (!parsed) throw InvalidInput(fmt::format("unknown strategy '{}'", *strategy));
      base.strategy = *parsed;
    }
    if (k) base.budget = BudgetConfig::with_defaults(*k, n_experts);
    if (lower) base.budget.lower_bound = *lower;
    if (upper) base.budget.upper_bound = *upper;
    return base;
  }
};

// Unselected entries tying a selected entry of the same competition pool;
// the lower (sequence, token, expert) index won each of them.
std::size_t boundary_ties(const ScoreMatrix& s, const RoutingMask& mask, bool per_token) {
  std::size_t ties = 0;
  const std::size_t T = s.tokens(), N = s.experts();
  auto count_pool = [&](std::size_t t0, std::size_t t1) {
    std::vector<double> chosen;
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t e = 0; e < N; ++e) {
        if (mask.selected(t, e)) chosen.push_back(s(t, e));
      }
    }
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t e = 0; e < N; ++e) {
        if (!mask.selected(t, e) &&
            std::binary_search(chosen.begin(), chosen.end(), s(t, e))) {
          ++ties;
        }
      }
    }
  };
  if (per_token) {
    for (std::size_t t = 0; t < T; ++t) count_pool(t, t + 1);
  } else {
    count_pool(0, T);
  }
  return ties;
}

int cmd_route(const std::string& scores_path, const BudgetFlags& flags,
              const std::string& out_dir, std::ostream& out) {
  const auto sequences = parse_score_csv(read_file(scores_path));
  const std::size_t N = sequences.front().experts();
  RoutingOptions base{Strategy::kSeqTopK, BudgetConfig::with_defaults(std::min<std::size_t>(2, N), N),
                      false};
  const auto opt = flags.apply(base, N);
  opt.budget.validate(N);

  std::vector<RoutingMask> masks;
  if (opt.strategy == Strategy::kBatchTopK) {
    masks = batchtopk_route(sequences, opt.budget.k_tok);
  } else {
    for (const auto& s : sequences) masks.push_back(route(s, opt));
  }

  fs::create_directories(out_dir);
  const auto mask_path = fs::path(out_dir) / "masks.csv";
  write_file(mask_path, masks_to_csv(masks));

  json report;
  report["strategy"] = std::string(to_string(opt.strategy));
  report["budget"] = {{"k", opt.budget.k_tok},
                      {"lower_bound", opt.budget.lower_bound},
                      {"upper_bound", opt.budget.upper_bound}};
  report["mask_file"] = mask_path.string();
  std::size_t total = 0, budget = 0;
  json seqs = json::array();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    const std::size_t T = m.tokens();
    total += m.total();
    budget += T * opt.budget.k_tok;
    seqs.push_back({{"tokens", T},
                    {"selected", m.total()},
                    {"budget", T * opt.budget.k_tok},
                    {"per_token_counts", m.counts()},
                    {"ties_broken_by_index",
                     boundary_ties(sequences[i], m, opt.strategy == Strategy::kTopK)}});
  }
  report["total_selected"] = total;
  report["total_budget"] = budget;
  report["sequences"] = std::move(seqs);
  out << report.dump(2) << "\n";
  return kOk;
}

ExperimentConfig load_config(const std::optional<std::string>& path) {
  return path ? config_from_json(read_file(*path)) : default_experiment_config();
}

int cmd_train(const std::optional<std::string>& config_path, const BudgetFlags& flags,
              std::optional<std::uint64_t> seed, std::optional<std::size_t> steps,
              const std::optional<std::string>& out_dir, std::ostream& out) {
  auto config = load_config(config_path);
  config.train.routing = flags.apply(config.train.routing, config.model.n_experts);
  if (seed) {
    config.task.seed = *seed;
    config.train.seed = *seed;
  }
  if (steps) config.train.steps = *steps;
  if (out_dir) config.output_dir = *out_dir;
  config.validate();

  const auto artifacts = run_training_experiment(config, config.output_dir);
  json summary{{"checkpoint", artifacts.checkpoint.string()},
               {"metrics", artifacts.metrics.string()},
               {"config", artifacts.config.string()},
               {"steps", config.train.steps},
               {"strategy", std::string(to_string(config.train.routing.strategy))}};
  if (!artifacts.result.trace.empty()) {
    const auto& last = artifacts.result.trace.back();
    summary["final_task_loss"] = last.task_loss;
    summary["final_total_loss"] = last.total_loss;
  }
  out << summary.dump(2) << "\n";
  return kOk;
}

const std::vector<std::string> kReportNames{"entropy", "activation", "token-entropy",
                                            "batch-sensitivity", "logprob-shift"};

int cmd_analyze(const std::string& checkpoint_path, const BudgetFlags& flags,
                std::optional<std::uint64_t> corpus_seed, std::vector<std::string> wanted,
                const std::string& out_dir, std::ostream& out) {
  if (!fs::exists(checkpoint_path)) {
    throw InvalidInput(fmt::format("checkpoint {} not found", checkpoint_path));
  }
  std::string meta;
  const auto model = checkpoint_from_json(read_file(checkpoint_path), &meta);
  auto config = config_from_checkpoint_meta(meta, model.dims);
  const auto routing = flags.apply(config.train.routing, model.dims.n_experts);
  routing.budget.validate(model.dims.n_experts);
  if (corpus_seed) config.task.seed = *corpus_seed;
  if (wanted.empty()) wanted = kReportNames;
  for (const auto& w : wanted) {
    if (std::find(kReportNames.begin(), kReportNames.end(), w) == kReportNames.end()) {
      throw InvalidInput(fmt::format("unknown report '{}'", w));
    }
  }
  auto want = [&](const std::string& name) {
    return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
  };

  const SyntheticTask task(config.task);
  const auto corpus = task.corpus(config.eval_sequences);
  const auto ev = evaluate(model, corpus, routing);
  const std::string strategy(to_string(routing.strategy));
  const std::size_t L = model.dims.n_layers;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  std::vector<MetricReport> reports;
  reports.push_back({"task_loss", 0, strategy, {ev.task_loss, ev.easy_loss, ev.hard_loss}});
  if (want("entropy")) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto stats = routing_entropy(ev.scores[l], l);
      reports.push_back({"routing_entropy", l, strategy, {stats.normalized_entropy}});
      reports.push_back({"expert_load", l, strategy, stats.per_expert_load});
    }
  }
  if (want("activation")) {
    std::string csv = "layer,experts,tokens\n";
    for (std::size_t l = 0; l < L; ++l) {
      const auto hist = activation_distribution(ev.masks[l]);
      std::vector<double> values(model.dims.n_experts + 1, 0.0);
      for (const auto& [c, n] : hist) {
        values[c] = static_cast<double>(n);
        csv += fmt::format("{},{},{}\n", l, c, n);
      }
      reports.push_back({"activation_distribution", l, strategy, std::move(values)});
    }
    write_file(dir / "activation_histogram.csv", csv);
  }
  if (want("token-entropy")) {
    std::vector<double> r;
    std::string csv = "bin,entropy_lo,entropy_hi,mean_entropy,mean_experts,count\n";
    try {
      const auto corr = token_entropy_vs_experts(ev.token_records);
      r.push_back(corr.pearson);
      for (std::size_t b = 0; b < corr.bins.size(); ++b) {
        const auto& bin = corr.bins[b];
        csv += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", b, bin.entropy_lo,
                           bin.entropy_hi, bin.mean_entropy, bin.mean_experts, bin.count);
      }
    } catch (const CorrelationUndefined&) {
      // Constant expert counts (e.g. TopK): no correlation to report.
    }
    reports.push_back({"token_entropy_vs_experts", 0, strategy, std::move(r)});
    write_file(dir / "token_entropy_bins.csv", csv);
  }
  if (want("batch-sensitivity")) {
    std::vector<ScoreMatrix> scores;
    for (const auto& m : ev.scores[0]) scores.emplace_back(m);
    std::vector<std::size_t> sizes;
    for (std::size_t b : {1, 4, 16}) {
      if (scores.size() % b == 0) sizes.push_back(b);
    }
    const auto sweep = batch_sensitivity_sweep(routing.strategy, routing.budget, sizes, scores);
    std::string csv = "batch_size,identical_to_unbatched,mean_budget_deviation,mean_gate_mass\n";
    std::vector<double> identical;
    for (const auto& e : sweep) {
      identical.push_back(e.identical_to_unbatched ? 1.0 : 0.0);
      csv += fmt::format("{},{},{:.17g},{:.17g}\n", e.batch_size,
                         e.identical_to_unbatched ? 1 : 0, e.mean_budget_deviation,
                         e.mean_gate_mass);
    }
    reports.push_back({"batch_sensitivity", 0, strategy, std::move(identical)});
    write_file(dir / "batch_sensitivity.csv", csv);
  }
  if (want("logprob-shift")) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= model.dims.n_experts; ++k) ks.push_back(k);
    const std::size_t ref = routing.budget.k_tok;
    std::vector<double> mean(ks.size(), 0.0);
    std::size_t tokens = 0;
    std::string csv = "sequence,token,k,shift\n";
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      const auto shift =
          token_logprob_shift(model, corpus[s].inputs, corpus[s].targets, ks, ref);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        for (std::size_t t = 0; t < shift[i].size(); ++t) {
          mean[i] += shift[i][t];
          csv += fmt::format("{},{},{},{:.17g}\n", s, t, ks[i], shift[i][t]);
        }
      }
      tokens += corpus[s].targets.size();
    }
    for (double& m : mean) m /= static_cast<double>(tokens);
    reports.push_back({"logprob_shift", 0, strategy, std::move(mean)});
    write_file(dir / "logprob_shift.csv", csv);
  }

  const auto text = reports_to_json(reports);
  write_file(dir / "reports.json", text);
  out << text << "\n";
  return kOk;
}

int cmd_verify(const std::vector<int>& only, bool inject_fault,
               const std::optional<std::string>& scratch, std::ostream& out) {
  acceptance::Options options;
  options.inject_off_budget_fault = inject_fault;
  options.only.insert(only.begin(), only.end());
  if (scratch) options.scratch_dir = *scratch;
  const auto results = acceptance::run(options, out);
  const auto passed = static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return r.passed; }));
  out << fmt::format("{}/{} criteria passed\n", passed, results.size());
  return passed == results.size() ? kOk : kVerifyFailed;
}

}  // namespace

std::vector<ScoreMatrix> parse_score_csv(const std::string& text) {
  std::vector<ScoreMatrix> sequences;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0, first_line = 0;
  auto flush = [&] {
    if (rows.empty()) return;
    sequences.push_back(ScoreMatrix::from_rows(rows));
    rows.clear();
  };

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const auto field = trim(line.substr(pos, comma == std::string_view::npos
                                                   ? std::string_view::npos
                                                   : comma - pos));
      const std::size_t column = static_cast<std::size_t>(field.data() - raw.data()) + 1;
      double v = 0.0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || ec != std::errc{} || end != field.data() + field.size()) {
        throw ParseError(line_no, column, fmt::format("not a number: '{}'", field));
      }
      if (!std::isfinite(v) || v < 0.0) {
        throw ParseError(line_no, column, fmt::format("score {} is not a probability", v));
      }
      row.push_back(v);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (width == 0) {
      width = row.size();
      first_line = line_no;
    } else if (row.size() != width) {
      throw ParseError(line_no, 1,
                       fmt::format("{} columns, expected {} (as on line {})", row.size(),
                                   width, first_line));
    }
    try {
      validate_probability_row(row);
    } catch (const InvalidInput& e) {
      throw ParseError(line_no, 1, e.what());
    }
    rows.push_back(std::move(row));
  }
  flush();
  if (sequences.empty()) throw ParseError(line_no + 1, 1, "no score rows");
  return sequences;
}

std::string masks_to_csv(const std::vector<RoutingMask>& masks) {
  std::string out;
  for (std::size_t s = 0; s < masks.size(); ++s) {
    if (s > 0) out += '\n';
    const auto& m = masks[s];
    for (std::size_t t = 0; t < m.tokens(); ++t) {
      for (std::size_t e = 0; e < m.experts(); ++e) {
        if (e > 0) out += ',';
        out += m.selected(t, e) ? '1' : '0';
      }
      out += '\n';
    }
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"moelab: sequence-level expert routing experiments"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 verify failure, 2 bad input or missing file, "
      "3 infeasible budget, 4 training diverged.");

  std::string scores_path, route_out = ".";
  BudgetFlags route_flags;
  auto* route_cmd = app.add_subcommand("route", "Route a score file and audit the budget");
  route_cmd->add_option("--scores", scores_path, "CSV of router scores")->required();
  route_flags.add_to(route_cmd);
  route_cmd->add_option("--out", route_out, "Directory for masks.csv");

  std::optional<std::string> config_path, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> steps;
  BudgetFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train the toy MoE language model");
  train_cmd->add_option("--config", config_path, "ExperimentConfig JSON");
  train_flags.add_to(train_cmd);
  train_cmd->add_option("--seed", train_seed, "Task and initialization seed");
  train_cmd->add_option("--steps", steps, "Training steps");
  train_cmd->add_option("--out", train_out, "Output directory");

  std::string checkpoint_path, analyze_out = "analysis";
  std::optional<std::uint64_t> corpus_seed;
  std::vector<std::string> reports;
  BudgetFlags analyze_flags;
  auto* analyze_cmd = app.add_subcommand("analyze", "Routing analytics for a checkpoint");
  analyze_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  analyze_flags.add_to(analyze_cmd);
  analyze_cmd->add_option("--seed", corpus_seed, "Evaluation corpus seed");
  analyze_cmd->add_option("--reports", reports, fmt::format("Subset of: {}",
                                                             fmt::join(kReportNames, ", ")))
      ->delimiter(',');
  analyze_cmd->add_option("--out", analyze_out, "Directory for report files");

  std::vector<int> only;
  bool inject_fault = false;
  std::optional<std::string> scratch;
  auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance checks");
  verify_cmd->add_option("--only", only, "Criterion ids to run")->delimiter(',');
  verify_cmd->add_flag("--inject-fault", inject_fault,
                       "Corrupt one mask to exercise the failure path");
  verify_cmd->add_option("--scratch", scratch, "Scratch directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kBadInput;
  }

  try {
    if (*route_cmd) return cmd_route(scores_path, route_flags, route_out, out);
    if (*train_cmd) {
      return cmd_train(config_path, train_flags, train_seed, steps, train_out, out);
    }
    if (*analyze_cmd) {
      return cmd_analyze(checkpoint_path, analyze_flags, corpus_seed, reports, analyze_out,
                         out);
    }
    return cmd_verify(only, inject_fault, scratch, out);
  } catch (const ParseError& e) {
    err << fmt::format("error: line {}, column {}: {}\n", e.line(), e.column(), e.what());
    return kBadInput;
  } catch (const BudgetInfeasible& e) {
    err << "error: infeasible budget: " << e.what() << "\n";
    return kInfeasibleBudget;
  } catch (const TrainingDivergence& e) {
    err << fmt::format("error: training diverged at step {}: {}\n", e.step(), e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kBadInput;
  }
}

}  // namespace moelab::cli
