#pragma once

#include <cstddef>
#include <vector>

#include "tndvga/tensor.hpp"

namespace tndvga {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Constant CSR matrix. Never differentiated.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  /// Throws InputError on out-of-range or duplicate (row, col) entries.
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> entries);

  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  /// Entry lookup by binary search within the row; 0 when absent.
  double at(std::size_t r, std::size_t c) const;
  std::vector<Triplet> triplets() const;
  Tensor to_dense() const;

  /// this * dense
  Tensor multiply(const Tensor& dense) const;
  /// this^T * dense
  Tensor multiply_transposed(const Tensor& dense) const;

  bool operator==(const SparseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace tndvga
