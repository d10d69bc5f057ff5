#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace moelab {

// Dense row-major matrix of doubles. Small and boring on purpose: every
// tensor in this project is at most a few thousand entries.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::vector<std::vector<double>> to_rows() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// y = A x
void matvec(const Matrix& a, std::span<const double> x, std::span<double> y);
// y += A^T x
void matvec_transposed_acc(const Matrix& a, std::span<const double> x,
                           std::span<double> y);
// A += alpha * u v^T
void outer_acc(Matrix& a, std::span<const double> u, std::span<const double> v,
               double alpha = 1.0);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace moelab
