#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "odernn/errors.hpp"

namespace odernn {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

// Eight independent partial sums; the summation order is fixed so results are
// reproducible regardless of inlining or vectorization.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), [&] { return "dot: length mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()); });
  return dot(a.data(), b.data(), a.size());
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: length mismatch");
  axpy(alpha, x.data(), y.data(), x.size());
}

// y = W x + b
inline Vector affine(const Matrix& w, std::span<const double> x, std::span<const double> b) {
  require(x.size() == w.cols, [&] { return "affine: input length " + std::to_string(x.size()) +
                                  " does not match weight " + shape_str(w.rows, w.cols); });
  require(b.size() == w.rows, "affine: bias length mismatch");
  Vector y(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) y[r] = b[r] + dot(w.data.data() + r * w.cols, x.data(), w.cols);
  return y;
}

// out += W^T g
inline void add_transposed_product(const Matrix& w, std::span<const double> g, std::span<double> out) {
  require(g.size() == w.rows && out.size() == w.cols, "add_transposed_product: shape mismatch");
  for (std::size_t r = 0; r < w.rows; ++r) {
    if (g[r] == 0.0) continue;
    axpy(g[r], w.data.data() + r * w.cols, out.data(), w.cols);
  }
}

// W += g x^T
inline void add_outer(Matrix& w, std::span<const double> g, std::span<const double> x) {
  require(g.size() == w.rows && x.size() == w.cols, "add_outer: shape mismatch");
  for (std::size_t r = 0; r < w.rows; ++r) {
    if (g[r] == 0.0) continue;
    axpy(g[r], x.data(), w.data.data() + r * w.cols, w.cols);
  }
}

inline double squared_norm(std::span<const double> v) { return dot(v.data(), v.data(), v.size()); }

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline Vector& operator+=(Vector& a, const Vector& b) {
  require(a.size() == b.size(), "vector add: length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace odernn
