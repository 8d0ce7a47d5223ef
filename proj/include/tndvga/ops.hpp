#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tndvga/sparse.hpp"
#include "tndvga/tape.hpp"

// The fixed operation set the model is built from. Every op evaluates
// eagerly, validates shapes (InputError) and finiteness (NumericalError), and
// never mutates its operands.
//
// Elementwise binary ops broadcast in matrix view: each dimension of the two
// operands must be equal or 1.
namespace tndvga::ad {

Var matmul(Var a, Var b);
/// Constant sparse left factor times a dense operand.
Var spmm(const SparseMatrix& s, Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);

Var exp(Var a);
Var log(Var a);
/// Derivative is taken as 0 at exactly 0.
Var sqrt(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// log(1 + exp(a)), evaluated stably.
Var softplus(Var a);
/// Zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// Sum over rows: (r, c) -> (1, c).
Var sum_rows(Var a);
/// Sum over columns: (r, c) -> (r, 1).
Var sum_cols(Var a);
Var mean_rows(Var a);
Var mean_cols(Var a);
/// Stable log-sum-exp over columns of each row: (r, c) -> (r, 1).
Var logsumexp_cols(Var a);
/// Stable log-sum-exp over rows of each column: (r, c) -> (1, c).
Var logsumexp_rows(Var a);

/// Feature-axis concatenation. Zero-width operands are allowed.
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
/// Columns [begin, begin + count).
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var select_rows(Var a, std::span<const std::size_t> rows);
/// Rows where mask is true, in order.
Var mask_rows(Var a, const std::vector<bool>& mask);
/// (na, d), (nb, d) -> (na, nb) squared Euclidean distances.
Var sqdist(Var a, Var b);
/// Row-major flat element selection -> (1, m).
Var gather(Var a, std::span<const std::size_t> flat_indices);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator+(Var a, double k) { return add_scalar(a, k); }
inline Var operator-(Var a, double k) { return add_scalar(a, -k); }
inline Var operator-(Var a) { return scale(a, -1.0); }

std::vector<std::size_t> mask_to_indices(const std::vector<bool>& mask);

}  // namespace tndvga::ad
