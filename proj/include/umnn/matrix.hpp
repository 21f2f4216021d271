#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "umnn/common.hpp"

namespace umnn {

// Thread-local counters for buffer allocations. Tests use these to verify
// that hot loops (notably the quadrature backward pass) reuse preallocated
// workspaces instead of allocating per iteration.
struct alloc_stats {
  static std::uint64_t& count() {
    thread_local std::uint64_t c = 0;
    return c;
  }
  static std::uint64_t& bytes() {
    thread_local std::uint64_t b = 0;
    return b;
  }
  static void reset() {
    count() = 0;
    bytes() = 0;
  }
  static void record(std::size_t n_doubles) {
    if (n_doubles == 0) return;
    ++count();
    bytes() += n_doubles * sizeof(double);
  }
};

// Dense row-major matrix of doubles. Column vectors are stored as n x 1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols) {
    alloc_stats::record(rows * cols);
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  // Reshapes the buffer. Contents are unspecified afterwards. Only counts as
  // an allocation when the existing capacity is insufficient.
  void resize(std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    if (n > data_.capacity()) alloc_stats::record(n);
    data_.resize(n);
    rows_ = rows;
    cols_ = cols;
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }
  void zero() { fill(0.0); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                          const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
}

}  // namespace umnn
