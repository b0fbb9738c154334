#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "optbench/shape.hpp"

namespace optbench {

// Dense row-major buffer. `grad` mirrors `values` after a backward pass when
// requires_grad is set; it stays empty otherwise.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::vector<T> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw std::invalid_argument("tensor " + shape.str() + " expects " +
                                  std::to_string(shape.numel()) + " values, got " +
                                  std::to_string(values.size()));
    }
  }

  static Tensor zeros(Shape s, bool rg = false) {
    std::vector<T> v(static_cast<size_t>(s.numel()), T(0));
    return Tensor(std::move(s), std::move(v), rg);
  }
  static Tensor full(Shape s, T fill, bool rg = false) {
    std::vector<T> v(static_cast<size_t>(s.numel()), fill);
    return Tensor(std::move(s), std::move(v), rg);
  }

  std::int64_t numel() const { return shape.numel(); }

  void zero_grad() {
    grad.assign(values.size(), T(0));
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(),
                       [](T x) { return std::isfinite(static_cast<double>(x)); });
  }
  bool grad_finite() const {
    return std::all_of(grad.begin(), grad.end(),
                       [](T x) { return std::isfinite(static_cast<double>(x)); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(values.size());
    for (size_t i = 0; i < values.size(); ++i) v[i] = static_cast<U>(values[i]);
    return Tensor<U>(shape, std::move(v), requires_grad);
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace optbench
