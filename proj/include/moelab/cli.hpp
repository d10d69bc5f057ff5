#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "moelab/routing.hpp"

namespace moelab::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kBadInput = 2,  // usage error, parse failure, missing file
  kInfeasibleBudget = 3,
  kDiverged = 4,
};

// Score files: one token per line, comma-separated expert scores, blank lines
// separating sequences. Every row must be a probability row. Throws
// ParseError with the 1-based line and column of the offending field.
std::vector<ScoreMatrix> parse_score_csv(const std::string& text);

// Same layout as score files with 0/1 entries.
std::string masks_to_csv(const std::vector<RoutingMask>& masks);

// Entry point of the `moelab` tool: route | train | analyze | verify.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moelab::cli
