// avlip/tensor.hpp

// Copyright 2026  The avlip authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "avlip/common.hpp"

namespace avlip {

/// Dense row-major N-d array.  Deliberately minimal: the layers below do
/// their heavy lifting through Eigen maps over the flat buffer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) { resize(std::move(shape)); }

  Tensor(std::initializer_list<int64_t> shape)
      : Tensor(std::vector<int64_t>(shape)) {}

  void resize(std::vector<int64_t> shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) raise<BadShape>("negative tensor dimension ", d);
      n *= d;
    }
    shape_ = std::move(shape);
    data_.assign(static_cast<size_t>(n), T(0));
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  template <typename... Idx>
  T& operator()(Idx... idx) {
    return data_[static_cast<size_t>(flat_index(idx...))];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const {
    return data_[static_cast<size_t>(flat_index(idx...))];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void set_zero() { fill(T(0)); }

  // Reinterprets the buffer with a new shape of identical element count.
  Tensor<T>& reshape(std::vector<int64_t> shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    if (n != numel())
      raise<BadShape>("reshape from ", shape_str(), " to incompatible size ", n);
    shape_ = std::move(shape);
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool same_shape(const Tensor<T>& o) const { return shape_ == o.shape_; }

 private:
  template <typename... Idx>
  int64_t flat_index(Idx... idx) const {
    const int64_t ids[] = {static_cast<int64_t>(idx)...};
    int64_t flat = 0;
    for (size_t i = 0; i < sizeof...(Idx); ++i) flat = flat * shape_[i] + ids[i];
    return flat;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Maps a contiguous region of a tensor as a rows x cols row-major matrix.
template <typename T>
Eigen::Map<RowMat<T>> map_matrix(T* data, int64_t rows, int64_t cols) {
  return Eigen::Map<RowMat<T>>(data, rows, cols);
}
template <typename T>
Eigen::Map<const RowMat<T>> map_matrix(const T* data, int64_t rows, int64_t cols) {
  return Eigen::Map<const RowMat<T>>(data, rows, cols);
}

template <typename T>
Eigen::Map<ColVec<T>> map_vector(T* data, int64_t n) {
  return Eigen::Map<ColVec<T>>(data, n);
}
template <typename T>
Eigen::Map<const ColVec<T>> map_vector(const T* data, int64_t n) {
  return Eigen::Map<const ColVec<T>>(data, n);
}

}  // namespace avlip
