// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPVD_MATRIX_H_
#define DPVD_MATRIX_H_

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dpvd {

// Dense row-major matrix of doubles. All shape violations throw
// std::invalid_argument; no operation silently broadcasts except the
// explicitly named *_row_broadcast helpers.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: " + std::to_string(data_.size()) +
                                  " values for shape " + std::to_string(rows_) +
                                  "x" + std::to_string(cols_));
    }
  }

  static Matrix constant(std::size_t rows, std::size_t cols, double value) {
    Matrix m(rows, cols);
    for (double& v : m.data_) v = value;
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b,
                               const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(
        std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
        std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
        std::to_string(b.cols()) + " differ");
  }
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument(
        "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
        std::to_string(b.rows()) + " differ");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* op = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ap + i * k;
    double* orow = op + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      // Sparse inputs (image pixels) make this branch worthwhile. Skipping a
      // zero term never changes the accumulated value: sums start at +0.0.
      if (av == 0.0) continue;
      const double* brow = bp + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

// y += s * x
inline void axpy_inplace(Matrix& y, double s, const Matrix& x) {
  detail::require_same_shape(y, x, "axpy_inplace");
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += s * x.data()[i];
}

// Adds a 1 x cols row vector to every row of a.
inline Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row_broadcast: row must be 1x" +
                                std::to_string(a.cols()));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += row(0, j);
  }
  return out;
}

// Column sums as a 1 x cols matrix.
inline Matrix colsum(const Matrix& a) {
  Matrix out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
  }
  return out;
}

inline Matrix relu(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Row-wise softmax with max-shift; finite for arbitrarily large logits.
inline Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double e = std::exp(a(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

inline Matrix log_softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) sum += std::exp(a(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) - lse;
  }
  return out;
}

// Frobenius norm.
inline double l2_norm(const Matrix& a) {
  double ss = 0.0;
  for (double v : a.data()) ss += v * v;
  return std::sqrt(ss);
}

inline std::vector<double> row_squared_norms(const Matrix& a) {
  std::vector<double> out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) ss += a(i, j) * a(i, j);
    out[i] = ss;
  }
  return out;
}

// Scales a to norm at most c. Inputs already inside the ball are returned
// unchanged (no multiply), so the no-op case is bit-exact.
inline Matrix clip_to_norm(const Matrix& a, double c) {
  if (!(c > 0.0)) {
    throw std::invalid_argument("clip_to_norm: threshold must be positive");
  }
  const double norm = l2_norm(a);
  if (norm <= c) return a;
  return scale(a, c / norm);
}

inline Matrix slice_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) {
      throw std::invalid_argument("slice_rows: index " +
                                  std::to_string(idx[i]) + " out of range");
    }
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(idx[i], j);
  }
  return out;
}

}  // namespace dpvd

#endif  // DPVD_MATRIX_H_
