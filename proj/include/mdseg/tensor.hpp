#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mdseg/error.hpp"

namespace mdseg {

/// Dense row-major array. Shapes are (C, H, W) for single images and feature maps,
/// (C_out, C_in, kH, kW) or (C_in, C_out, kH, kW) for kernels.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // (c, y, x) access for rank-3 tensors.
  T& at(int c, int y, int x) noexcept { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  const T& at(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  /// Contiguous plane c of a rank-3 tensor.
  std::span<T> plane(int c) noexcept {
    const std::size_t n = static_cast<std::size_t>(shape_[1]) * shape_[2];
    return {data_.data() + c * n, n};
  }
  std::span<const T> plane(int c) const noexcept {
    const std::size_t n = static_cast<std::size_t>(shape_[1]) * shape_[2];
    return {data_.data() + c * n, n};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

  static std::string shape_string(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
      if (e < 1) throw DimensionError("tensor extents must be >= 1, got " + shape_string(shape));
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

/// Per-pixel label map (H, W). Binary {0,1} for structure masks; multi-class for ML labels.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& operator()(int y, int x) noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t operator()(int y, int x) const noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const noexcept { return data.size(); }
  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
  bool empty_foreground() const noexcept { return count() == 0; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace mdseg
