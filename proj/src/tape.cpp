#include "tndvga/tape.hpp"

#include "tndvga/errors.hpp"

namespace tndvga::ad {

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::constant(Tensor value) {
  if (check_finite_ && !value.all_finite()) throw NumericalError("constant contains non-finite values");
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  Param& p = store.at(name);
  nodes_.push_back(Node{p.value, {}, true, {}, &p, name});
  const std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(name, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward, const char* op) {
  if (check_finite_ && !value.all_finite()) throw NumericalError(std::string(op) + " produced a non-finite value");
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw InputError(std::string(op) + ": operand belongs to a different tape");
    needs = needs || v.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw InputError("backward on an empty tape");
  if (loss.tape_ != this) throw InputError("backward: loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw InputError("backward requires a scalar loss, got shape " + shape_string(loss.value().shape()));
  }
  if (Tensor* seed = grad_slot(loss)) (*seed)[0] = 1.0;

  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (!n.grad.all_finite()) throw NumericalError("non-finite gradient for parameter " + n.param_name);
      double* dst = n.param->grad.data();
      const double* src = n.grad.data();
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
      continue;
    }
    if (n.backward) {
      // Moved out so the node's storage can be released once propagated.
      Tensor g = std::move(n.grad);
      n.backward(*this, g);
    }
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  param_ids_.clear();
}

}  // namespace tndvga::ad
