#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "normadapt/error.hpp"

namespace normadapt {

enum class DType : std::uint8_t { float32 = 0, float64 = 1 };

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Scalar T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::float32 : DType::float64;
}

inline const char* dtype_name(DType d) {
  return d == DType::float32 ? "float32" : "float64";
}

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage. Use clone()
/// for a deep copy and detach() for a copy that is cut off from autograd.
/// The gradient buffer is only materialized when something writes to it
/// through mutable_grad(), so frozen parameters never carry one.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Storage>()) {
    if (normadapt::numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(normadapt::numel(shape)) + " elements but buffer has " +
                       std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> data(normadapt::numel(shape), T(0));
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> data(normadapt::numel(shape), value);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (!on) impl_->grad.clear();
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }

  // Materializes a zero gradient on first access.
  std::span<T> mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const {
    Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
    out.impl_->grad = impl_->grad;
    return out;
  }

  Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }

  // Copy of the data under a new shape.
  Tensor reshaped_copy(Shape shape) const { return Tensor(std::move(shape), impl_->data, false); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  template <Scalar U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.size());
    std::transform(impl_->data.begin(), impl_->data.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(impl_->shape, std::move(out), impl_->requires_grad);
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

}  // namespace normadapt
