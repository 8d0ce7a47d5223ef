#include "tndvga/sparse.hpp"

#include <algorithm>
#include <string>

#include "tndvga/errors.hpp"

namespace tndvga {

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> entries)
    : rows_(rows), cols_(cols) {
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  row_ptr_.assign(rows + 1, 0);
  col_idx_.reserve(entries.size());
  values_.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.row >= rows || e.col >= cols) {
      throw InputError("sparse entry (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                       ") out of range");
    }
    if (k > 0 && entries[k - 1].row == e.row && entries[k - 1].col == e.col) {
      throw InputError("duplicate sparse entry (" + std::to_string(e.row) + "," +
                       std::to_string(e.col) + ")");
    }
    ++row_ptr_[e.row + 1];
    col_idx_.push_back(e.col);
    values_.push_back(e.value);
  }
  for (std::size_t r = 0; r < rows; ++r) row_ptr_[r + 1] += row_ptr_[r];
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> t;
  t.reserve(n);
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return SparseMatrix(n, n, std::move(t));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
  const auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, col_idx_[k], values_[k]});
  }
  return out;
}

Tensor SparseMatrix::to_dense() const {
  Tensor d = Tensor::matrix(rows_, cols_);
  for (const auto& t : triplets()) d(t.row, t.col) = t.value;
  return d;
}

namespace {

// dst[0..w) += v * src[0..w); fixed widths let the compiler fully vectorize.
template <std::size_t W>
inline void axpy_fixed(double* __restrict dst, const double* __restrict src, double v) {
  for (std::size_t j = 0; j < W; ++j) dst[j] += v * src[j];
}

inline void axpy(double* __restrict dst, const double* __restrict src, double v, std::size_t w) {
  std::size_t j = 0;
  for (; j + 8 <= w; j += 8) axpy_fixed<8>(dst + j, src + j, v);
  for (; j < w; ++j) dst[j] += v * src[j];
}

}  // namespace

Tensor SparseMatrix::multiply(const Tensor& dense) const {
  if (dense.rows() != cols_) {
    throw InputError("sparse multiply: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                     " times " + shape_string(dense.shape()));
  }
  const std::size_t w = dense.cols();
  Tensor out = Tensor::matrix(rows_, w);
  const double* in = dense.data();
  for (std::size_t r = 0; r < rows_; ++r) {
    double* dst = out.data() + r * w;
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) axpy(dst, in + col_idx_[k] * w, values_[k], w);
  }
  return out;
}

Tensor SparseMatrix::multiply_transposed(const Tensor& dense) const {
  if (dense.rows() != rows_) {
    throw InputError("sparse transposed multiply: shape mismatch with " + shape_string(dense.shape()));
  }
  const std::size_t w = dense.cols();
  Tensor out = Tensor::matrix(cols_, w);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* src = dense.data() + r * w;
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      axpy(out.data() + col_idx_[k] * w, src, values_[k], w);
    }
  }
  return out;
}

}  // namespace tndvga
