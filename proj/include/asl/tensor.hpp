#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asl/errors.hpp"

namespace asl {

// Dense (batch, channels, height, width) tensor, row-major in that order.
template <typename T>
class Tensor4 {
 public:
  using Dims = std::array<std::size_t, 4>;

  Tensor4() = default;
  explicit Tensor4(Dims dims, T fill = T(0))
      : dims_(dims), data_(dims[0] * dims[1] * dims[2] * dims[3], fill) {}
  Tensor4(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims[0] * dims[1] * dims[2] * dims[3]) {
      throw ShapeMismatch("tensor: data length " + std::to_string(data_.size()) + " does not match dims");
    }
  }

  const Dims& dims() const { return dims_; }
  std::size_t batch() const { return dims_[0]; }
  std::size_t channels() const { return dims_[1]; }
  std::size_t height() const { return dims_[2]; }
  std::size_t width() const { return dims_[3]; }
  std::size_t size() const { return data_.size(); }
  std::size_t sample_size() const { return dims_[1] * dims_[2] * dims_[3]; }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* sample(std::size_t n) { return data_.data() + n * sample_size(); }
  const T* sample(std::size_t n) const { return data_.data() + n * sample_size(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
void require_finite(std::span<const T> values, const char* context) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteValue(std::string(context) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

}  // namespace asl
