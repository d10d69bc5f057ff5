#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "moelab/analytics.hpp"
#include "moelab/backward.hpp"
#include "moelab/error.hpp"
#include "moelab/online.hpp"
#include "moelab/routing.hpp"

namespace py = pybind11;
using namespace moelab;

namespace {

using Rows = std::vector<std::vector<double>>;
using MaskRows = std::vector<std::vector<int>>;

MaskRows mask_rows(const RoutingMask& m) {
  MaskRows out(m.tokens(), std::vector<int>(m.experts(), 0));
  for (std::size_t t = 0; t < m.tokens(); ++t) {
    for (std::size_t e = 0; e < m.experts(); ++e) out[t][e] = m.selected(t, e) ? 1 : 0;
  }
  return out;
}

RoutingMask mask_from_rows(const ScoreMatrix& scores, const MaskRows& rows) {
  if (rows.size() != scores.tokens()) throw InvalidInput("mask and scores differ in tokens");
  std::vector<std::uint8_t> sel;
  for (const auto& r : rows) {
    if (r.size() != scores.experts()) throw InvalidInput("mask and scores differ in experts");
    for (int v : r) sel.push_back(v != 0);
  }
  return RoutingMask(scores, std::move(sel));
}

BudgetConfig budget_for(std::size_t k, std::size_t n, std::optional<std::size_t> lower,
                        std::optional<std::size_t> upper) {
  auto b = BudgetConfig::with_defaults(k, n);
  if (lower) b.lower_bound = *lower;
  if (upper) b.upper_bound = *upper;
  return b;
}

py::dict step_dict(const OnlineStepResult& r) {
  py::dict d;
  d["experts"] = r.selected_experts;
  d["gates"] = r.gate_weights;
  d["cumulative"] = r.cumulative_count;
  d["budget_available"] = r.budget_available;
  d["lower_bound_forced"] = r.lower_bound_forced;
  return d;
}

class OnlineRouter {
 public:
  OnlineRouter(std::size_t n_experts, std::size_t k, std::optional<std::size_t> lower,
               std::optional<std::size_t> upper)
      : cache_(n_experts), budget_(budget_for(k, n_experts, lower, upper)) {
    budget_.validate(n_experts);
  }

  py::dict step(const std::vector<double>& row) {
    return step_dict(online_route_step_inplace(cache_, row, budget_));
  }
  std::vector<std::pair<std::size_t, std::size_t>> horizon() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& p : selection_set_at_horizon(cache_, budget_.k_tok)) {
      out.emplace_back(p.token, p.expert);
    }
    return out;
  }
  py::dict audit() const {
    const auto a = audit_budget(cache_, budget_.k_tok);
    py::dict d;
    d["cumulative"] = a.cumulative;
    d["ratio"] = a.ratio;
    d["max_ratio"] = a.max_ratio;
    return d;
  }
  std::size_t steps() const { return cache_.steps(); }
  std::string to_json() const { return cache_to_json(cache_, budget_); }
  static OnlineRouter from_json(const std::string& text) {
    std::optional<BudgetConfig> b;
    auto cache = cache_from_json(text, &b);
    if (!b) throw InvalidInput("snapshot has no budget");
    OnlineRouter r(cache.n_experts(), b->k_tok, b->lower_bound, b->upper_bound);
    r.cache_ = std::move(cache);
    return r;
  }

 private:
  ExpertCache cache_;
  BudgetConfig budget_;
};

}  // namespace

PYBIND11_MODULE(_moelab, m) {
  m.doc() = "Sequence-level expert routing primitives";

  py::register_exception<BudgetInfeasible>(m, "BudgetInfeasible", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);

  m.def("softmax_scores", [](const Rows& logits) {
    return softmax_scores(Matrix::from_rows(logits)).values().to_rows();
  });
  m.def("topk_route", [](const Rows& s, std::size_t k) {
    return mask_rows(topk_route(ScoreMatrix::from_rows(s), k));
  }, py::arg("scores"), py::arg("k"));
  m.def("seqtopk_route", [](const Rows& s, std::size_t k) {
    return mask_rows(seqtopk_route_unbounded(ScoreMatrix::from_rows(s), k));
  }, py::arg("scores"), py::arg("k"));
  m.def("seqtopk_route_bounded",
        [](const Rows& s, std::size_t k, std::optional<std::size_t> lower,
           std::optional<std::size_t> upper) {
          const auto scores = ScoreMatrix::from_rows(s);
          return mask_rows(seqtopk_route_bounded(scores, budget_for(k, scores.experts(), lower, upper)));
        },
        py::arg("scores"), py::arg("k"), py::arg("lower_bound") = py::none(),
        py::arg("upper_bound") = py::none());
  m.def("batchtopk_route", [](const std::vector<Rows>& batch, std::size_t k) {
    std::vector<ScoreMatrix> seqs;
    for (const auto& s : batch) seqs.push_back(ScoreMatrix::from_rows(s));
    std::vector<MaskRows> out;
    for (const auto& mask : batchtopk_route(seqs, k)) out.push_back(mask_rows(mask));
    return out;
  }, py::arg("batch"), py::arg("k"));
  m.def("online_route",
        [](const Rows& s, std::size_t k, std::optional<std::size_t> lower,
           std::optional<std::size_t> upper) {
          const auto scores = ScoreMatrix::from_rows(s);
          return mask_rows(online_route_sequence(scores, budget_for(k, scores.experts(), lower, upper)));
        },
        py::arg("scores"), py::arg("k"), py::arg("lower_bound") = py::none(),
        py::arg("upper_bound") = py::none());

  py::class_<OnlineRouter>(m, "OnlineRouter")
      .def(py::init<std::size_t, std::size_t, std::optional<std::size_t>,
                    std::optional<std::size_t>>(),
           py::arg("n_experts"), py::arg("k"), py::arg("lower_bound") = py::none(),
           py::arg("upper_bound") = py::none())
      .def("step", &OnlineRouter::step, py::arg("row"))
      .def("horizon_selection", &OnlineRouter::horizon)
      .def("audit", &OnlineRouter::audit)
      .def_property_readonly("steps", &OnlineRouter::steps)
      .def("to_json", &OnlineRouter::to_json)
      .def_static("from_json", &OnlineRouter::from_json);

  m.def("normalized_entropy", [](const std::vector<double>& p) { return normalized_entropy(p); });
  m.def("routing_entropy", [](const Rows& probs) {
    return routing_entropy(Matrix::from_rows(probs)).normalized_entropy;
  });
  m.def("load_balance_loss", [](const MaskRows& mask, const Rows& s) {
    const auto scores = ScoreMatrix::from_rows(s);
    return load_balance_loss(mask_from_rows(scores, mask), scores);
  }, py::arg("mask"), py::arg("scores"));
}
