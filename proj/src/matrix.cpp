#include "ansync/matrix.hpp"

namespace ansync {

Matrix matmul(const Matrix& x, const Matrix& y) {
  if (x.cols != y.rows) throw DimensionError("matmul: inner dimensions differ");
  Matrix out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* oi = out.row(i);
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double v = xi[k];
      const double* yk = y.row(k);
      for (std::size_t j = 0; j < y.cols; ++j) oi[j] += v * yk[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

}  // namespace ansync
