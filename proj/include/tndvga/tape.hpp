#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>

#include "tndvga/params.hpp"
#include "tndvga/tensor.hpp"

namespace tndvga::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Every operation evaluates eagerly and, when any input
/// requires gradients, records a closure that pushes the output adjoint back
/// to its inputs.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a stored parameter. Repeated calls with the same name
  /// return the same node; gradients land in the store on backward().
  Var param(ParamStore& store, const std::string& name);

  /// Appends an op result. Throws NumericalError if `value` is not finite.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward, const char* op);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward), op);
  }

  /// Gradient accumulator for `v`, allocated on first use. nullptr when `v`
  /// does not require gradients.
  Tensor* grad_slot(Var v);

  /// Accumulates d(loss)/d(param) into each bound parameter's grad, then clears
  /// the tape. Throws InputError for a non-scalar loss or an empty tape and
  /// NumericalError for non-finite gradients.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  /// Per-op finiteness checks on recorded values (on by default). Parameter
  /// gradients are always checked in backward().
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Param* param = nullptr;
    std::string param_name;
  };

  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool check_finite_ = true;
};

}  // namespace tndvga::ad
