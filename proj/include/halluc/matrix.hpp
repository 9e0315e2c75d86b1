#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "halluc/errors.hpp"

namespace halluc {

// Dense row-major matrix of doubles, rank <= 2. Scalars are 1x1, row
// vectors 1xN. All numeric state in the project lives in these.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw ContractError("Matrix: negative dimension");
  }
  Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<size_t>(r) * c)
      throw ContractError("Matrix: data size does not match " + shape_str());
  }

  static Matrix scalar(double v) {
    Matrix m(1, 1);
    m.data[0] = v;
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  double scalar_value() const {
    if (!is_scalar()) throw ContractError("Matrix: scalar_value on " + shape_str());
    return data[0];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

inline bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

// c += a * b
inline void add_matmul_nn(Matrix& c, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    throw ContractError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                        b.shape_str() + " -> " + c.shape_str());
  for (int i = 0; i < a.rows; ++i) {
    double* crow = c.row_ptr(i);
    const double* arow = a.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c += a * b^T
inline void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
    throw ContractError("matmul_nt: dimensions disagree");
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row_ptr(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// c += a^T * b
inline void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw ContractError("matmul_tn: dimensions disagree");
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (int i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.row_ptr(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ContractError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                        b.shape_str());
  Matrix c(a.rows, b.cols);
  add_matmul_nn(c, a, b);
  return c;
}

}  // namespace halluc
