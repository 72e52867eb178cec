// Copyright 2026 The CoverEst Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "coverest/errors.hpp"

namespace coverest {

// Dense row-major array. T is double for gradient verification and float
// for training.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T{})
      : shape(std::move(s)), values(element_count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != element_count(shape)) {
      throw GeometryError(fmt::format("tensor of shape [{}] cannot hold {} values",
                                      fmt::join(shape, ","), values.size()));
    }
  }

  static std::size_t element_count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  std::size_t size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }
  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  void fill(T v) { std::fill(values.begin(), values.end(), v); }
};

inline std::string shape_string(const std::vector<int>& shape) {
  return fmt::format("[{}]", fmt::join(shape, ", "));
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.values.assign(t.values.begin(), t.values.end());
  return out;
}

}  // namespace coverest
