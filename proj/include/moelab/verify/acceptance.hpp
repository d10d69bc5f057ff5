#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace moelab::acceptance {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  // Corrupts one mask inside the budget-conservation check (self-test).
  bool inject_off_budget_fault = false;
  // Criteria to run; empty means all.
  std::set<int> only;
  // Scratch space for checks that write files.
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
};

struct Criterion {
  int id;
  std::string name;
  std::function<CheckResult(const Options&)> run;
};

const std::vector<Criterion>& criteria();

// Runs the selected criteria in id order, printing one PASS/FAIL line per
// criterion to `log` as it completes.
std::vector<CheckResult> run(const Options& options, std::ostream& log);

std::string format_result(const CheckResult& r);

// Individual checks, exposed for targeted tests.
CheckResult check_budget_conservation(const Options& options);
CheckResult check_bounded_oracle(const Options& options);
CheckResult check_online_budget(const Options& options);
CheckResult check_horizon_recovery(const Options& options);
CheckResult check_sparse_dense(const Options& options);
CheckResult check_gradients(const Options& options);
CheckResult check_batch_invariance(const Options& options);
CheckResult check_entropy_metric(const Options& options);
CheckResult check_soft_entropy_allocation(const Options& options);
CheckResult check_soft_loss_ordering(const Options& options);
CheckResult check_train_determinism(const Options& options);

}  // namespace moelab::acceptance
