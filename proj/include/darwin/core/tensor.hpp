// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "darwin/core/error.hpp"

namespace darwin {

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Checkpoints hold `Tensor` (f32); parent deltas
/// are `DeltaTensor` (f64) so that base + delta is exact.
template <typename T>
struct BasicTensor {
  using value_type = T;

  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;
  BasicTensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
      fail(ErrorCode::kShapeMismatch,
           "tensor data length " + std::to_string(data.size()) +
               " does not match shape " + shape_string(shape));
    }
  }

  static BasicTensor zeros(Shape s) {
    auto n = shape_numel(s);
    return BasicTensor(std::move(s), std::vector<T>(n, T{}));
  }

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::span<const T> values() const { return data; }
  std::span<T> values() { return data; }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<float>;
using DeltaTensor = BasicTensor<double>;

template <typename A, typename B>
void require_same_shape(const BasicTensor<A>& a, const BasicTensor<B>& b,
                        std::string_view what) {
  if (a.shape != b.shape) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": shape " +
                                        shape_string(a.shape) + " vs " +
                                        shape_string(b.shape));
  }
}

}  // namespace darwin
