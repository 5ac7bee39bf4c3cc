#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stm/rng.hpp"

namespace stm {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major N-d array. Plain value type; gradient bookkeeping lives in
// Graph, the requires_grad flag only marks leaves fed into it.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] < 1) {
        throw std::invalid_argument("tensor: extent " + std::to_string(i) +
                                    " of shape " + shape_str(shape_) +
                                    " must be >= 1");
      }
    }
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  T& at(int i, int j) { return data_[idx2(i, j)]; }
  const T& at(int i, int j) const { return data_[idx2(i, j)]; }
  T& at(int c, int h, int w) { return data_[idx3(c, h, w)]; }
  const T& at(int c, int h, int w) const { return data_[idx3(c, h, w)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // Cast with per-element rounding; used to move between the 32-bit default
  // and the 64-bit oracle mode.
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i)
      out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    out.requires_grad = requires_grad;
    return out;
  }

  bool requires_grad = false;

 private:
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace stm
