#include "moelab/matrix.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "moelab/error.hpp"

namespace moelab {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InvalidInput("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m;
  m.rows_ = rows.size();
  m.cols_ = rows.empty() ? 0 : rows.front().size();
  m.data_.reserve(m.rows_ * m.cols_);
  for (const auto& r : rows) {
    if (r.size() != m.cols_) throw InvalidInput("ragged matrix rows");
    m.data_.insert(m.data_.end(), r.begin(), r.end());
  }
  return m;
}

std::vector<std::vector<double>> Matrix::to_rows() const {
  std::vector<std::vector<double>> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    auto src = row(r);
    out[r].assign(src.begin(), src.end());
  }
  return out;
}

void matvec(const Matrix& a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == a.cols() && y.size() == a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double acc = 0.0;
    auto ar = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) acc += ar[c] * x[c];
    y[r] = acc;
  }
}

void matvec_transposed_acc(const Matrix& a, std::span<const double> x,
                           std::span<double> y) {
  assert(x.size() == a.rows() && y.size() == a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    auto ar = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += ar[c] * xr;
  }
}

void outer_acc(Matrix& a, std::span<const double> u, std::span<const double> v,
               double alpha) {
  assert(u.size() == a.rows() && v.size() == a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double ur = alpha * u[r];
    if (ur == 0.0) continue;
    auto ar = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) ar[c] += ur * v[c];
  }
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput("max_abs_diff: shape mismatch");
  }
  double worst = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    worst = std::max(worst, std::abs(da[i] - db[i]));
  }
  return worst;
}

}  // namespace moelab
