#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed shapes, non-finite values, rows that are not probability rows.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The requested budget cannot be met under the given shape or bounds.
class BudgetInfeasible : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  TrainingDivergence(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Pearson correlation with zero variance on either side.
class CorrelationUndefined : public Error {
 public:
  using Error::Error;
};

// Text input that fails to parse; line and column are 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : Error(what), line_(line), column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace moelab
