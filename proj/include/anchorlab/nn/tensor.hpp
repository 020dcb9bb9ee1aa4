#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::nn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Value type; copies are deep.
template <class T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;
  BasicTensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ConfigError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
  }

  static BasicTensor zeros(Shape s) { return full(std::move(s), T(0)); }
  static BasicTensor full(Shape s, T v) {
    auto n = static_cast<std::size_t>(numel(s));
    return BasicTensor(std::move(s), std::vector<T>(n, v));
  }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int axis) const { return shape.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
  T item() const {
    if (data.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <class To, class From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> d(t.data.begin(), t.data.end());
  return BasicTensor<To>(t.shape, std::move(d));
}

}  // namespace anchorlab::nn
