#include "tndvga/params.hpp"

#include <cmath>

#include "tndvga/errors.hpp"

namespace tndvga {

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw InputError("duplicate parameter name: " + name);
  Tensor grad(init.shape(), 0.0);
  auto [it, ok] = params_.emplace(name, Param{std::move(init), std::move(grad)});
  return it->second;
}

Param& ParamStore::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw InputError("unknown parameter: " + std::string(name));
  return it->second;
}

const Param& ParamStore::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InputError("unknown parameter: " + std::string(name));
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

double ParamStore::squared_norm() const {
  double s = 0.0;
  for (const auto& [name, p] : params_) {
    for (double v : p.value.values()) s += v * v;
  }
  return s;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || !(a->second.value == b->second.value)) return false;
  }
  return true;
}

AdamState make_adam_state(const ParamStore& store, const AdamOptions& options) {
  AdamState state;
  state.options = options;
  for (const auto& [name, p] : store) {
    state.first_moment.emplace(name, Tensor(p.value.shape(), 0.0));
    state.second_moment.emplace(name, Tensor(p.value.shape(), 0.0));
  }
  return state;
}

void adam_step(ParamStore& store, AdamState& state) {
  const auto& opt = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(opt.beta1, t);
  const double bias2 = 1.0 - std::pow(opt.beta2, t);
  for (auto& [name, p] : store) {
    auto m_it = state.first_moment.find(name);
    auto v_it = state.second_moment.find(name);
    if (m_it == state.first_moment.end() || v_it == state.second_moment.end() ||
        !m_it->second.same_shape(p.value) || !v_it->second.same_shape(p.value)) {
      throw InputError("Adam state is not initialized for parameter " + name);
    }
    double* theta = p.value.data();
    const double* grad = p.grad.data();
    double* m = m_it->second.data();
    double* v = v_it->second.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = grad[i] + 2.0 * opt.weight_decay * theta[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
    p.grad.fill(0.0);
  }
}

}  // namespace tndvga
