#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dgvc/error.hpp"

namespace dgvc {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array with a runtime shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    for (int d : shape_) require<ShapeError>(d >= 0, "negative tensor dimension in " + shape_str(shape_));
    data_.assign(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require<ShapeError>(data_.size() == shape_size(shape_),
                        "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                            shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 access.
  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    require<ShapeError>(shape_size(s) == data_.size(),
                        "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
Tensor<T> map(const Tensor<T>& a, const std::function<T(T)>& f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace dgvc
