#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "attriqe/errors.hpp"

namespace attriqe::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

enum class Precision { f32, f64 };

std::string_view precision_tag(Precision p) noexcept;
Precision parse_precision(std::string_view tag);

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

// Dense row-major tensor. Value semantics; copying copies the elements.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " needs " +
                           std::to_string(element_count(shape_)) + " elements, got " +
                           std::to_string(values_.size()));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }
  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  // 2-D accessors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& storage() noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool flag) noexcept {
    requires_grad_ = flag;
    return *this;
  }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    Tensor<U> t(shape_, std::move(out));
    t.set_requires_grad(requires_grad_);
    return t;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  bool requires_grad_ = false;
};

}  // namespace attriqe::ad
