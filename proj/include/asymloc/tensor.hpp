#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "asymloc/errors.hpp"

namespace asymloc {

std::string dims_to_string(const std::vector<int>& dims);

/// Dense row-major array of float or double. Value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0)) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(count(dims_), fill);
  }
  Tensor(std::vector<int> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (data_.size() != count(dims_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_to_string(dims_));
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D and 3-D accessors; no bounds checks.
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * dims_[1] + c]; }
  T& at(int ch, int y, int x) {
    return data_[(static_cast<std::size_t>(ch) * dims_[1] + y) * dims_[2] + x];
  }
  const T& at(int ch, int y, int x) const {
    return data_[(static_cast<std::size_t>(ch) * dims_[1] + y) * dims_[2] + x];
  }

  Tensor reshaped(std::vector<int> dims) const { return Tensor(std::move(dims), data_); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  static std::size_t count(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
  }

 private:
  void validate_dims() const {
    for (int d : dims_)
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
  }

  std::vector<int> dims_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace asymloc
