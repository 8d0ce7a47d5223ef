#include "tndvga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "tndvga/errors.hpp"

namespace tndvga {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw InputError("tensor rank > 2 is not supported: " + shape_string(shape_));
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (shape_.size() > 2) throw InputError("tensor rank > 2 is not supported: " + shape_string(shape_));
  if (shape_size(shape_) != values_.size()) {
    throw InputError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor(Shape{rows, cols}, fill);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw InputError("ragged rows in Tensor::from_rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(Shape{values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
  if (values_.size() != 1) throw InputError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const {
  // v - v is NaN exactly when v is infinite or NaN.
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = values_.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t k = 0; k < 4; ++k) acc[k] += values_[i + k] - values_[i + k];
  }
  for (; i < n; ++i) acc[0] += values_[i] - values_[i];
  return (acc[0] + acc[1] + acc[2] + acc[3]) == 0.0;
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

}  // namespace tndvga
