#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tndvga {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned allocation, so vectorized kernels see the same alignment
/// (and hence the same summation order) on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles. Rank 0, 1 or 2.
///
/// Matrix views: rank 0 is 1x1, rank 1 of length n is a 1xn row (the last
/// axis is the column axis), rank 2 is (shape[0], shape[1]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  /// n x 1 column built from a vector.
  static Tensor column(std::span<const double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.size() < 2 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  Storage& storage() { return values_; }
  const Storage& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// The single element of a size-1 tensor.
  double item() const;
  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage values_;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

}  // namespace tndvga
