// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/tensor.hpp"

#include <cmath>

namespace quantdesk {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix y(a.rows, b.cols);
  for (int64_t i = 0; i < a.rows; ++i) {
    for (int64_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (int64_t j = 0; j < b.cols; ++j) y.at(i, j) += aik * b.at(k, j);
    }
  }
  return y;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_bt: inner dimensions differ");
  Matrix y(a.rows, b.rows);
  for (int64_t i = 0; i < a.rows; ++i) {
    for (int64_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(j, k);
      y.at(i, j) = acc;
    }
  }
  return y;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_at: inner dimensions differ");
  Matrix y(a.cols, b.cols);
  for (int64_t k = 0; k < a.rows; ++k) {
    for (int64_t i = 0; i < a.cols; ++i) {
      const double aki = a.at(k, i);
      if (aki == 0.0) continue;
      for (int64_t j = 0; j < b.cols; ++j) y.at(i, j) += aki * b.at(k, j);
    }
  }
  return y;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (int64_t i = 0; i < m.rows; ++i)
    for (int64_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

double amax(const Matrix& m) {
  double a = 0.0;
  for (double v : m.data) a = std::max(a, std::fabs(v));
  return a;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(static_cast<size_t>(m.rows), 0.0);
  for (int64_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < m.cols; ++j) s += m.at(i, j) * m.at(i, j);
    out[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return out;
}

std::vector<double> col_norms(const Matrix& m) {
  std::vector<double> out(static_cast<size_t>(m.cols), 0.0);
  for (int64_t i = 0; i < m.rows; ++i)
    for (int64_t j = 0; j < m.cols; ++j) out[static_cast<size_t>(j)] += m.at(i, j) * m.at(i, j);
  for (double& v : out) v = std::sqrt(v);
  return out;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson_correlation: length mismatch");
  const size_t n = a.size();
  if (n == 0) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace quantdesk
