#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "tndvga/tensor.hpp"

namespace tndvga {

struct Param {
  Tensor value;
  Tensor grad;
};

/// Named trainable arrays with gradient accumulators. Iteration order is
/// lexicographic by name, which keeps every traversal deterministic.
class ParamStore {
 public:
  using Map = std::map<std::string, Param, std::less<>>;

  Param& add(const std::string& name, Tensor init);
  Param& at(std::string_view name);
  const Param& at(std::string_view name) const;
  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  std::size_t count() const { return params_.size(); }
  std::size_t total_size() const;
  /// Sum of squares of every parameter entry.
  double squared_norm() const;
  void zero_grad();

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  /// True when names, shapes and values all agree bit for bit.
  bool same_values(const ParamStore& other) const;

 private:
  Map params_;
};

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Coefficient of lambda * ||theta||^2; realized as 2*lambda*theta added to the gradient.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::map<std::string, Tensor, std::less<>> first_moment;
  std::map<std::string, Tensor, std::less<>> second_moment;
};

/// Zero moments shaped like every parameter in the store.
AdamState make_adam_state(const ParamStore& store, const AdamOptions& options);

/// One Adam update with L2 folded into the gradient. Gradients are zeroed afterwards.
/// Throws InputError if the state lacks moments for any parameter.
void adam_step(ParamStore& store, AdamState& state);

}  // namespace tndvga
