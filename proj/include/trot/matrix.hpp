#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace trot {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Every problem in this library is a
/// small dense table (marginals times marginals), so the container stays
/// deliberately simple.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix out(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != out.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) out(i, j++) = v;
      ++i;
    }
    return out;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

private:
  std::size_t rows_ = 0, cols_ = 0;
  Vector data_;
};

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Vector row_sums(const Matrix& a) {
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a(i, j);
  return out;
}

inline Vector col_sums(const Matrix& a) {
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
  return out;
}

inline double sum(const Matrix& a) { return std::accumulate(a.begin(), a.end(), 0.0); }

inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("frobenius_dot: shape mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l1_distance(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l1_distance: shape mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a.data()[k] - b.data()[k]);
  return d;
}

inline double l1_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_distance: length mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
  return d;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// Outer product r c^T: the independence coupling when r, c are marginals.
inline Matrix outer(const Vector& r, const Vector& c) {
  Matrix out(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) out(i, j) = r[i] * c[j];
  return out;
}

inline bool all_finite(const Matrix& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace trot
