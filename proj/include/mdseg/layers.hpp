#pragma once

// Forward and analytical backward passes for the layer kinds used by the
// segmentation networks. All functions operate on single (C, H, W) tensors and
// are pure: state needed by a backward pass (e.g. pooling argmax) is returned.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

enum class LayerKind : std::uint8_t { Conv = 0, Deconv = 1, MaxPool = 2, Relu = 3 };

std::string to_string(LayerKind kind);

/// Geometry of one layer. For Deconv, `padding` trims that many pixels from every
/// border of the transposed-convolution output. For MaxPool, kernel_h is the window.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;

  bool has_weights() const noexcept { return kind == LayerKind::Conv || kind == LayerKind::Deconv; }
  /// Weight tensor shape: (C_out, C_in, kH, kW) for conv, (C_in, C_out, kH, kW) for deconv.
  std::vector<int> weight_shape() const;
  std::size_t parameter_count() const;
  /// Output spatial extent for an input extent; throws ConfigError on non-integral geometry.
  int output_extent(int in_extent, bool vertical = true) const;
  void validate() const;

  static LayerSpec conv(int cin, int cout, int k, int stride = 1, int pad = 0);
  static LayerSpec deconv(int cin, int cout, int k, int stride, int trim = 0);
  static LayerSpec maxpool(int window, int stride);
  static LayerSpec relu();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

template <typename T>
struct LayerGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  /// Flat index into the input tensor of each output's winning element.
  std::vector<std::int32_t> argmax;
};

template <typename T>
struct SoftmaxLoss {
  T loss{};
  Tensor<T> prob;
  Tensor<T> grad_logits;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride,
                         int padding);

/// When `need_input_grad` is false the returned `input` gradient is left empty.
template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                              int stride, int padding, bool need_input_grad = true);

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, int window, int stride);

template <typename T>
Tensor<T> maxpool_backward(std::span<const std::int32_t> argmax, const Tensor<T>& grad_out,
                           const std::vector<int>& input_shape);

/// Transposed (backwards strided) convolution; output extent (in - 1) * stride + k.
template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride);

template <typename T>
LayerGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                                int stride, bool need_input_grad = true);

/// Removes `border` pixels from each side of every plane.
template <typename T>
Tensor<T> trim_border(const Tensor<T>& input, int border);

template <typename T>
Tensor<T> trim_border_backward(const Tensor<T>& grad_out, int border);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

/// Per-pixel softmax over channels (C, H, W).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Loss is summed over pixels: -sum_x log p(y_x | x). grad = p - onehot(y).
template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const Mask& labels);

/// Corner-aligned bilinear interpolation of every plane of a (C, H, W) tensor.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& image, int target_h, int target_w);

/// Dispatches one layer of any kind. `argmax` receives the pooling winners for MaxPool.
template <typename T>
Tensor<T> layer_forward(const LayerSpec& spec, const Tensor<T>& input, const Tensor<T>& weights,
                        std::span<const T> bias, std::vector<std::int32_t>* argmax = nullptr);

template <typename T>
LayerGrads<T> layer_backward(const LayerSpec& spec, const Tensor<T>& input, const Tensor<T>& weights,
                             std::span<const std::int32_t> argmax, const Tensor<T>& grad_out,
                             bool need_input_grad = true);

/// Nearest-neighbour resize of a label map with the same corner-aligned sampling grid.
Mask nearest_resize(const Mask& mask, int target_h, int target_w);

}  // namespace mdseg
