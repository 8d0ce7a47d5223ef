#include "tndvga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "tndvga/errors.hpp"

namespace tndvga::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MatMap view(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw InputError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

void accumulate(Tensor* slot, const Tensor& delta) {
  if (slot == nullptr) return;
  double* __restrict dst = slot->data();
  const double* __restrict src = delta.data();
  const std::size_t n = delta.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// Sums a broadcast gradient back down to the operand's matrix shape.
void accumulate_reduced(Tensor* slot, const Tensor& g) {
  if (slot == nullptr) return;
  const std::size_t r = slot->rows();
  const std::size_t c = slot->cols();
  if (r == g.rows() && c == g.cols()) {
    accumulate(slot, g);
    return;
  }
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const std::size_t si = r == 1 ? 0 : i;
    for (std::size_t j = 0; j < g.cols(); ++j) {
      (*slot)(si, c == 1 ? 0 : j) += g(i, j);
    }
  }
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.rank() == 0) return b.shape();
  if (b.rank() == 0) return a.shape();
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  if ((ra != rb && ra != 1 && rb != 1) || (ca != cb && ca != 1 && cb != 1)) shape_error(op, a, b);
  return Shape{std::max(ra, rb), std::max(ca, cb)};
}

template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape, 0.0);
  const std::size_t R = out.rows(), C = out.cols();
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  if (a.size() == out.size() && b.size() == out.size()) {
    double* __restrict o = out.data();
    const double* __restrict x = a.data();
    const double* __restrict y = b.data();
    const std::size_t n = out.size();
    for (std::size_t k = 0; k < n; ++k) o[k] = f(x[k], y[k]);
    return out;
  }
  for (std::size_t i = 0; i < R; ++i) {
    const std::size_t ia = ra == 1 ? 0 : i;
    const std::size_t ib = rb == 1 ? 0 : i;
    for (std::size_t j = 0; j < C; ++j) {
      out(i, j) = f(a(ia, ca == 1 ? 0 : j), b(ib, cb == 1 ? 0 : j));
    }
  }
  return out;
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape(), 0.0);
  double* __restrict o = out.data();
  const double* __restrict x = a.data();
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) o[k] = f(x[k]);
  return out;
}

// Unary elementwise op; `deriv` is the local derivative as a function of the input.
template <typename Fwd, typename Deriv>
Var unary(Var a, const char* op, Fwd fwd, Deriv deriv) {
  Tensor out = map_values(a.value(), fwd);
  return a.tape().record(std::move(out), {a},
                         [a, deriv](Tape& tape, const Tensor& g) {
                           Tensor* slot = tape.grad_slot(a);
                           if (slot == nullptr) return;
                           double* __restrict dst = slot->data();
                           const double* __restrict x = a.value().data();
                           const double* __restrict gv = g.data();
                           const std::size_t n = g.size();
                           for (std::size_t k = 0; k < n; ++k) dst[k] += gv[k] * deriv(x[k]);
                         },
                         op);
}

double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<std::size_t> mask_to_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx.push_back(i);
  }
  return idx;
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  if (av.cols() > 0) view(out).noalias() = view(av) * view(bv);
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g) {
                           if (Tensor* sa = tape.grad_slot(a); sa && a.value().cols() > 0) {
                             view(*sa).noalias() += view(g) * view(b.value()).transpose();
                           }
                           if (Tensor* sb = tape.grad_slot(b); sb && a.value().cols() > 0) {
                             view(*sb).noalias() += view(a.value()).transpose() * view(g);
                           }
                         },
                         "matmul");
}

Var spmm(const SparseMatrix& s, Var x) {
  Tensor out = s.multiply(x.value());
  return x.tape().record(std::move(out), {x},
                         [&s, x](Tape& tape, const Tensor& g) {
                           accumulate(tape.grad_slot(x), s.multiply_transposed(g));
                         },
                         "spmm");
}

Var add(Var a, Var b) {
  const Shape shape = broadcast_shape("add", a.value(), b.value());
  Tensor out = broadcast_apply(a.value(), b.value(), shape, [](double x, double y) { return x + y; });
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g) {
                           accumulate_reduced(tape.grad_slot(a), g);
                           accumulate_reduced(tape.grad_slot(b), g);
                         },
                         "add");
}

Var sub(Var a, Var b) {
  const Shape shape = broadcast_shape("sub", a.value(), b.value());
  Tensor out = broadcast_apply(a.value(), b.value(), shape, [](double x, double y) { return x - y; });
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g) {
                           accumulate_reduced(tape.grad_slot(a), g);
                           if (Tensor* sb = tape.grad_slot(b)) {
                             Tensor neg = map_values(g, [](double v) { return -v; });
                             accumulate_reduced(sb, neg);
                           }
                         },
                         "sub");
}

Var mul(Var a, Var b) {
  const Shape shape = broadcast_shape("mul", a.value(), b.value());
  Tensor out = broadcast_apply(a.value(), b.value(), shape, [](double x, double y) { return x * y; });
  return a.tape().record(std::move(out), {a, b},
                         [a, b, shape](Tape& tape, const Tensor& g) {
                           if (Tensor* sa = tape.grad_slot(a)) {
                             Tensor ga = broadcast_apply(g, b.value(), shape, [](double x, double y) { return x * y; });
                             accumulate_reduced(sa, ga);
                           }
                           if (Tensor* sb = tape.grad_slot(b)) {
                             Tensor gb = broadcast_apply(g, a.value(), shape, [](double x, double y) { return x * y; });
                             accumulate_reduced(sb, gb);
                           }
                         },
                         "mul");
}

Var scale(Var a, double k) {
  return unary(a, "scale", [k](double x) { return k * x; }, [k](double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(a, "add_scalar", [k](double x) { return x + k; }, [](double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double x) { return x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", sigmoid_value, [](double x) {
    const double s = sigmoid_value(x);
    return s * (1.0 - s);
  });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) { return unary(a, "softplus", softplus_value, sigmoid_value); }

Var clamp(Var a, double lo, double hi) {
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Tensor::scalar(s), {a},
                         [a](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (double& v : slot->values()) v += g[0];
                           }
                         },
                         "sum");
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw InputError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  }
  return a.tape().record(std::move(out), {a},
                         [a](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (std::size_t i = 0; i < slot->rows(); ++i) {
                               for (std::size_t j = 0; j < slot->cols(); ++j) (*slot)(i, j) += g[j];
                             }
                           }
                         },
                         "sum_rows");
}

Var sum_cols(Var a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j);
    out[i] = s;
  }
  return a.tape().record(std::move(out), {a},
                         [a](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (std::size_t i = 0; i < slot->rows(); ++i) {
                               for (std::size_t j = 0; j < slot->cols(); ++j) (*slot)(i, j) += g[i];
                             }
                           }
                         },
                         "sum_cols");
}

Var mean_rows(Var a) {
  if (a.value().rows() == 0) throw InputError("mean_rows of a tensor with no rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().rows()));
}

Var mean_cols(Var a) {
  if (a.value().cols() == 0) throw InputError("mean_cols of a tensor with no columns");
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.value().cols()));
}

Var logsumexp_cols(Var a) {
  const Tensor& av = a.value();
  if (av.cols() == 0) throw InputError("logsumexp_cols of a tensor with no columns");
  Tensor out = Tensor::matrix(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < av.cols(); ++j) m = std::max(m, av(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += std::exp(av(i, j) - m);
    out[i] = m + std::log(s);
  }
  Tensor copy = out;
  return a.tape().record(std::move(out), {a},
                         [a, y = std::move(copy)](Tape& tape, const Tensor& g) {
                           Tensor* slot = tape.grad_slot(a);
                           if (slot == nullptr) return;
                           const Tensor& x = a.value();
                           for (std::size_t i = 0; i < x.rows(); ++i) {
                             for (std::size_t j = 0; j < x.cols(); ++j) {
                               (*slot)(i, j) += g[i] * std::exp(x(i, j) - y[i]);
                             }
                           }
                         },
                         "logsumexp_cols");
}

Var logsumexp_rows(Var a) {
  const Tensor& av = a.value();
  if (av.rows() == 0) throw InputError("logsumexp_rows of a tensor with no rows");
  Tensor out = Tensor::matrix(1, av.cols());
  std::vector<double> m(av.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) m[j] = std::max(m[j], av(i, j));
  }
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += std::exp(av(i, j) - m[j]);
  }
  for (std::size_t j = 0; j < av.cols(); ++j) out[j] = m[j] + std::log(out[j]);
  Tensor copy = out;
  return a.tape().record(std::move(out), {a},
                         [a, y = std::move(copy)](Tape& tape, const Tensor& g) {
                           Tensor* slot = tape.grad_slot(a);
                           if (slot == nullptr) return;
                           const Tensor& x = a.value();
                           for (std::size_t i = 0; i < x.rows(); ++i) {
                             for (std::size_t j = 0; j < x.cols(); ++j) {
                               (*slot)(i, j) += g[j] * std::exp(x(i, j) - y[j]);
                             }
                           }
                         },
                         "logsumexp_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_cols of zero operands");
  const std::size_t r = parts.front().value().rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != r) shape_error("concat_cols", parts.front().value(), p.value());
    c += p.value().cols();
  }
  Tensor out = Tensor::matrix(r, c);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(pv.data() + i * pv.cols(), pv.cols(), out.data() + i * c + offset);
    }
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), parts,
                                     [inputs, c](Tape& tape, const Tensor& g) {
                                       std::size_t off = 0;
                                       for (const Var& p : inputs) {
                                         const std::size_t w = p.value().cols();
                                         if (Tensor* slot = tape.grad_slot(p)) {
                                           for (std::size_t i = 0; i < slot->rows(); ++i) {
                                             for (std::size_t j = 0; j < w; ++j) (*slot)(i, j) += g[i * c + off + j];
                                           }
                                         }
                                         off += w;
                                       }
                                     },
                                     "concat_cols");
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (begin + count > c) {
    throw InputError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(av.shape()));
  }
  Tensor out = Tensor::matrix(r, count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(av.data() + i * c + begin, count, out.data() + i * count);
  return a.tape().record(std::move(out), {a},
                         [a, begin, count, r, c](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (std::size_t i = 0; i < r; ++i) {
                               double* dst = slot->data() + i * c + begin;
                               const double* src = g.data() + i * count;
                               for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
                             }
                           }
                         },
                         "slice_cols");
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw InputError("select_rows: index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(av.data() + rows[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a},
                         [a, idx = std::move(idx), c](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < c; ++j) (*slot)(idx[i], j) += g[i * c + j];
                             }
                           }
                         },
                         "select_rows");
}

Var mask_rows(Var a, const std::vector<bool>& mask) {
  if (mask.size() != a.value().rows()) throw InputError("mask_rows: mask length does not match row count");
  const auto idx = mask_to_indices(mask);
  return select_rows(a, idx);
}

Var sqdist(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("sqdist", av, bv);
  const std::size_t na = av.rows(), nb = bv.rows(), d = av.cols();
  Tensor out = Tensor::matrix(na, nb);
  for (std::size_t i = 0; i < na; ++i) {
    const double* x = av.data() + i * d;
    for (std::size_t j = 0; j < nb; ++j) {
      const double* y = bv.data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - y[k];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g) {
                           // d/dx_i = 2 sum_j g_ij (x_i - y_j); d/dy_j = -2 sum_i g_ij (x_i - y_j)
                           const Tensor& x = a.value();
                           const Tensor& y = b.value();
                           const auto gm = view(g);
                           if (Tensor* sa = tape.grad_slot(a)) {
                             auto m = view(*sa);
                             const Eigen::VectorXd row_sum = gm.rowwise().sum();
                             m += 2.0 * (row_sum.asDiagonal() * view(x) - gm * view(y));
                           }
                           if (Tensor* sb = tape.grad_slot(b)) {
                             auto m = view(*sb);
                             const Eigen::VectorXd col_sum = gm.colwise().sum().transpose();
                             m += 2.0 * (col_sum.asDiagonal() * view(y) - gm.transpose() * view(x));
                           }
                         },
                         "sqdist");
}

Var gather(Var a, std::span<const std::size_t> flat_indices) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(1, flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= av.size()) throw InputError("gather: index out of range");
    out[i] = av[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  return a.tape().record(std::move(out), {a},
                         [a, idx = std::move(idx)](Tape& tape, const Tensor& g) {
                           if (Tensor* slot = tape.grad_slot(a)) {
                             for (std::size_t i = 0; i < idx.size(); ++i) (*slot)[idx[i]] += g[i];
                           }
                         },
                         "gather");
}

}  // namespace tndvga::ad
