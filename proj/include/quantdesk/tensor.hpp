// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace quantdesk {

// Dense row-major matrix of doubles. Double is the reference precision for
// everything in this workbench; low-precision values are held as decoded
// doubles plus their code containers.
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
  }
  Matrix(int64_t r, int64_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != r * c)
      throw std::invalid_argument("Matrix: data size does not match shape");
  }

  int64_t size() const { return rows * cols; }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }

  bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
};

// y = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// y = a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// y = a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

double amax(const Matrix& m);
double frobenius_norm(const Matrix& m);
bool all_finite(const Matrix& m);

// L2 norms of rows / columns.
std::vector<double> row_norms(const Matrix& m);
std::vector<double> col_norms(const Matrix& m);

// Pearson correlation of two equally sized samples. Returns 0 when either
// sample has zero variance.
double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace quantdesk
