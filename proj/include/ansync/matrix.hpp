#pragma once

#include <cstddef>
#include <vector>

#include "ansync/errors.hpp"

namespace ansync {

// Dense row-major matrix of doubles. All in-memory numerics use double;
// the disk containers store 32-bit floats (see io_formats).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix matmul(const Matrix& x, const Matrix& y);
Matrix transpose(const Matrix& m);

}  // namespace ansync
