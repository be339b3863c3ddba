#include <algorithm>
#include <cmath>
#include <limits>

#include "mdseg/layers.hpp"

namespace mdseg {

namespace {

template <typename T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
inline T plane_sum(const T* a, std::size_t n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void require_rank(const std::vector<int>& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got shape " +
                         Tensor<float>::shape_string(shape));
  }
}

struct ConvGeometry {
  int cin, h, w, cout, kh, kw, ho, wo;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, std::size_t bias_size, int stride,
                           int padding) {
  require_rank(input.shape(), 3, "conv input");
  require_rank(weights.shape(), 4, "conv weights");
  if (stride < 1 || padding < 0) throw ConfigError("conv stride must be >= 1 and padding >= 0");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weights.dim(0), weights.dim(2), weights.dim(3), 0, 0};
  if (weights.dim(1) != g.cin) {
    throw DimensionError("conv channel mismatch: input axis 0 has " + std::to_string(g.cin) +
                         " channels, weights axis 1 expects " + std::to_string(weights.dim(1)));
  }
  if (bias_size != static_cast<std::size_t>(g.cout)) {
    throw DimensionError("conv bias length " + std::to_string(bias_size) + " != weights axis 0 (" +
                         std::to_string(g.cout) + ")");
  }
  const int span_h = g.h + 2 * padding - g.kh;
  const int span_w = g.w + 2 * padding - g.kw;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + std::to_string(g.h + 2 * padding) + "x" +
                         std::to_string(g.w + 2 * padding));
  }
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw ConfigError("conv output size is not integral: (" + std::to_string(g.h) + " + 2*" +
                      std::to_string(padding) + " - " + std::to_string(g.kh) + ") / " + std::to_string(stride));
  }
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;
  return g;
}

template <typename T>
std::vector<T> zero_pad(const Tensor<T>& input, int pad) {
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<T> out(static_cast<std::size_t>(c) * hp * wp, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const T* src = input.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      std::copy(src, src + w, out.data() + (static_cast<std::size_t>(ch) * hp + y + pad) * wp + pad);
    }
  return out;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Deconv: return "deconv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Relu: return "relu";
  }
  return "unknown";
}

std::vector<int> LayerSpec::weight_shape() const {
  if (kind == LayerKind::Conv) return {out_channels, in_channels, kernel_h, kernel_w};
  if (kind == LayerKind::Deconv) return {in_channels, out_channels, kernel_h, kernel_w};
  return {};
}

std::size_t LayerSpec::parameter_count() const {
  if (!has_weights()) return 0;
  return static_cast<std::size_t>(in_channels) * out_channels * kernel_h * kernel_w + out_channels;
}

int LayerSpec::output_extent(int in_extent, bool vertical) const {
  const int k = vertical ? kernel_h : kernel_w;
  switch (kind) {
    case LayerKind::Conv: {
      const int span = in_extent + 2 * padding - k;
      if (span < 0 || span % stride != 0) {
        throw ConfigError("conv " + std::to_string(k) + "x" + std::to_string(k) + "/" + std::to_string(stride) +
                          " does not tile an input extent of " + std::to_string(in_extent));
      }
      return span / stride + 1;
    }
    case LayerKind::Deconv: {
      const int out = (in_extent - 1) * stride + k - 2 * padding;
      if (out < 1) throw ConfigError("deconv trim removes the whole output");
      return out;
    }
    case LayerKind::MaxPool: {
      if (in_extent < k || (in_extent - k) % stride != 0) {
        throw ConfigError("maxpool window " + std::to_string(k) + "/" + std::to_string(stride) +
                          " does not tile an input extent of " + std::to_string(in_extent));
      }
      return (in_extent - k) / stride + 1;
    }
    case LayerKind::Relu: return in_extent;
  }
  return in_extent;
}

void LayerSpec::validate() const {
  if (stride < 1) throw ConfigError("layer stride must be >= 1");
  if (padding < 0) throw ConfigError("layer padding must be >= 0");
  if (kernel_h < 1 || kernel_w < 1) throw ConfigError("layer kernel extents must be >= 1");
  if (has_weights() && (in_channels < 1 || out_channels < 1)) throw ConfigError("layer channel counts must be >= 1");
}

LayerSpec LayerSpec::conv(int cin, int cout, int k, int stride, int pad) {
  return {LayerKind::Conv, cin, cout, k, k, stride, pad};
}
LayerSpec LayerSpec::deconv(int cin, int cout, int k, int stride, int trim) {
  return {LayerKind::Deconv, cin, cout, k, k, stride, trim};
}
LayerSpec LayerSpec::maxpool(int window, int stride) { return {LayerKind::MaxPool, 0, 0, window, window, stride, 0}; }
LayerSpec LayerSpec::relu() { return {LayerKind::Relu, 0, 0, 1, 1, 1, 0}; }

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip).
//
// The stride-1 path runs on a zero-padded copy of the input and accumulates each
// output plane in "padded-width" layout: output (oy, ox) lives at oy * Wp + ox, so
// every kernel tap becomes one contiguous axpy over the whole plane. The k-1 extra
// columns per row are discarded when the plane is copied out.

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride,
                         int padding) {
  const ConvGeometry g = conv_geometry(input, weights, bias.size(), stride, padding);
  Tensor<T> out({g.cout, g.ho, g.wo});

  if (stride == 1) {
    const int hp = g.h + 2 * padding, wp = g.w + 2 * padding;
    std::vector<T> padded;
    const T* src = input.data();
    if (padding > 0) {
      padded = zero_pad(input, padding);
      src = padded.data();
    }
    const std::size_t plane = static_cast<std::size_t>(hp) * wp;
    const std::size_t span = static_cast<std::size_t>(g.ho - 1) * wp + g.wo;
    std::vector<T> ext(span);
    for (int co = 0; co < g.cout; ++co) {
      std::fill(ext.begin(), ext.end(), T(0));
      for (int ci = 0; ci < g.cin; ++ci) {
        const T* wk = weights.data() + (static_cast<std::size_t>(co) * g.cin + ci) * g.kh * g.kw;
        const T* base = src + ci * plane;
        for (int a = 0; a < g.kh; ++a)
          for (int b = 0; b < g.kw; ++b) axpy(ext.data(), base + a * wp + b, wk[a * g.kw + b], span);
      }
      for (int oy = 0; oy < g.ho; ++oy)
        for (int ox = 0; ox < g.wo; ++ox) out.at(co, oy, ox) = ext[oy * wp + ox] + bias[co];
    }
    return out;
  }

  for (int co = 0; co < g.cout; ++co) {
    auto o = out.plane(co);
    std::fill(o.begin(), o.end(), bias[co]);
    for (int ci = 0; ci < g.cin; ++ci)
      for (int a = 0; a < g.kh; ++a)
        for (int b = 0; b < g.kw; ++b) {
          const T w = weights.data()[((static_cast<std::size_t>(co) * g.cin + ci) * g.kh + a) * g.kw + b];
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * stride + a - padding;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * stride + b - padding;
              if (ix < 0 || ix >= g.w) continue;
              out.at(co, oy, ox) += w * input.at(ci, iy, ix);
            }
          }
        }
  }
  return out;
}

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                              int stride, int padding, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weights, static_cast<std::size_t>(weights.dim(0)), stride, padding);
  if (grad_out.shape() != std::vector<int>{g.cout, g.ho, g.wo}) {
    throw DimensionError("conv grad_out shape " + Tensor<T>::shape_string(grad_out.shape()) +
                         " != forward output shape " + Tensor<T>::shape_string({g.cout, g.ho, g.wo}));
  }
  LayerGrads<T> grads;
  grads.weights = Tensor<T>(weights.shape());
  grads.bias.assign(g.cout, T(0));
  for (int co = 0; co < g.cout; ++co) {
    auto p = grad_out.plane(co);
    grads.bias[co] = plane_sum(p.data(), p.size());
  }

  if (stride == 1) {
    const int hp = g.h + 2 * padding, wp = g.w + 2 * padding;
    std::vector<T> padded;
    const T* src = input.data();
    if (padding > 0) {
      padded = zero_pad(input, padding);
      src = padded.data();
    }
    const std::size_t plane = static_cast<std::size_t>(hp) * wp;
    const std::size_t span = static_cast<std::size_t>(g.ho - 1) * wp + g.wo;
    std::vector<T> grad_padded;
    if (need_input_grad) grad_padded.assign(static_cast<std::size_t>(g.cin) * plane, T(0));
    std::vector<T> gext(span);
    for (int co = 0; co < g.cout; ++co) {
      std::fill(gext.begin(), gext.end(), T(0));
      for (int oy = 0; oy < g.ho; ++oy)
        for (int ox = 0; ox < g.wo; ++ox) gext[oy * wp + ox] = grad_out.at(co, oy, ox);
      for (int ci = 0; ci < g.cin; ++ci) {
        const std::size_t woff = (static_cast<std::size_t>(co) * g.cin + ci) * g.kh * g.kw;
        const T* wk = weights.data() + woff;
        T* gw = grads.weights.data() + woff;
        const T* base = src + ci * plane;
        for (int a = 0; a < g.kh; ++a)
          for (int b = 0; b < g.kw; ++b) {
            gw[a * g.kw + b] = dot(gext.data(), base + a * wp + b, span);
            if (need_input_grad) axpy(grad_padded.data() + ci * plane + a * wp + b, gext.data(), wk[a * g.kw + b], span);
          }
      }
    }
    if (need_input_grad) {
      grads.input = Tensor<T>(input.shape());
      for (int ci = 0; ci < g.cin; ++ci)
        for (int y = 0; y < g.h; ++y) {
          const T* row = grad_padded.data() + ci * plane + static_cast<std::size_t>(y + padding) * wp + padding;
          std::copy(row, row + g.w, &grads.input.at(ci, y, 0));
        }
    }
    return grads;
  }

  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  for (int co = 0; co < g.cout; ++co)
    for (int ci = 0; ci < g.cin; ++ci)
      for (int a = 0; a < g.kh; ++a)
        for (int b = 0; b < g.kw; ++b) {
          const std::size_t wi = ((static_cast<std::size_t>(co) * g.cin + ci) * g.kh + a) * g.kw + b;
          const T w = weights.data()[wi];
          T acc = 0;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * stride + a - padding;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * stride + b - padding;
              if (ix < 0 || ix >= g.w) continue;
              const T go = grad_out.at(co, oy, ox);
              acc += go * input.at(ci, iy, ix);
              if (need_input_grad) grads.input.at(ci, iy, ix) += w * go;
            }
          }
          grads.weights.data()[wi] = acc;
        }
  return grads;
}

// ---------------------------------------------------------------------------
// Max pooling

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, int window, int stride) {
  require_rank(input.shape(), 3, "maxpool input");
  if (window < 1 || stride < 1) throw ConfigError("maxpool window and stride must be >= 1");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < window || w < window) {
    throw DimensionError("maxpool window " + std::to_string(window) + " larger than input " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  const int ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  PoolResult<T> r{Tensor<T>({c, ho, wo}), std::vector<std::int32_t>(static_cast<std::size_t>(c) * ho * wo)};
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::int32_t best = static_cast<std::int32_t>((static_cast<std::size_t>(ch) * h + oy * stride) * w + ox * stride);
        T best_v = input[best];
        for (int a = 0; a < window; ++a)
          for (int b = 0; b < window; ++b) {
            const auto idx =
                static_cast<std::int32_t>((static_cast<std::size_t>(ch) * h + oy * stride + a) * w + ox * stride + b);
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        r.output[o] = best_v;
        r.argmax[o] = best;
      }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(std::span<const std::int32_t> argmax, const Tensor<T>& grad_out,
                           const std::vector<int>& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("maxpool argmax length " + std::to_string(argmax.size()) + " != grad_out size " +
                         std::to_string(grad_out.size()));
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] < 0 || static_cast<std::size_t>(argmax[i]) >= grad.size()) {
      throw DimensionError("maxpool argmax index " + std::to_string(argmax[i]) + " outside input shape " +
                           Tensor<T>::shape_string(input_shape));
    }
    grad[argmax[i]] += grad_out[i];
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Transposed convolution. For each output channel and kernel tap (a, b), the
// contributions of all input channels are summed into a dense (H, W) plane and then
// scattered onto the stride-s output lattice offset by (a, b).

template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride) {
  require_rank(input.shape(), 3, "deconv input");
  require_rank(weights.shape(), 4, "deconv weights");
  if (stride < 1) throw ConfigError("deconv stride must be >= 1");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (weights.dim(0) != cin) {
    throw DimensionError("deconv channel mismatch: input axis 0 has " + std::to_string(cin) +
                         " channels, weights axis 0 expects " + std::to_string(weights.dim(0)));
  }
  const int cout = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (bias.size() != static_cast<std::size_t>(cout)) {
    throw DimensionError("deconv bias length " + std::to_string(bias.size()) + " != weights axis 1 (" +
                         std::to_string(cout) + ")");
  }
  const int ho = (h - 1) * stride + kh, wo = (w - 1) * stride + kw;
  Tensor<T> out({cout, ho, wo});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> acc(hw);
  for (int co = 0; co < cout; ++co) {
    auto o = out.plane(co);
    std::fill(o.begin(), o.end(), bias[co]);
    for (int a = 0; a < kh; ++a)
      for (int b = 0; b < kw; ++b) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ci = 0; ci < cin; ++ci) {
          const T wv = weights.data()[((static_cast<std::size_t>(ci) * cout + co) * kh + a) * kw + b];
          axpy(acc.data(), input.data() + ci * hw, wv, hw);
        }
        for (int iy = 0; iy < h; ++iy) {
          T* orow = o.data() + static_cast<std::size_t>(iy * stride + a) * wo + b;
          const T* arow = acc.data() + static_cast<std::size_t>(iy) * w;
          for (int ix = 0; ix < w; ++ix) orow[ix * stride] += arow[ix];
        }
      }
  }
  return out;
}

template <typename T>
LayerGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                                int stride, bool need_input_grad) {
  require_rank(input.shape(), 3, "deconv input");
  require_rank(weights.shape(), 4, "deconv weights");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (weights.dim(0) != cin) throw DimensionError("deconv channel mismatch between input axis 0 and weights axis 0");
  const int cout = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  const int ho = (h - 1) * stride + kh, wo = (w - 1) * stride + kw;
  if (grad_out.shape() != std::vector<int>{cout, ho, wo}) {
    throw DimensionError("deconv grad_out shape " + Tensor<T>::shape_string(grad_out.shape()) +
                         " != forward output shape " + Tensor<T>::shape_string({cout, ho, wo}));
  }
  LayerGrads<T> grads;
  grads.weights = Tensor<T>(weights.shape());
  grads.bias.assign(cout, T(0));
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> gathered(hw);
  for (int co = 0; co < cout; ++co) {
    auto gp = grad_out.plane(co);
    grads.bias[co] = plane_sum(gp.data(), gp.size());
    for (int a = 0; a < kh; ++a)
      for (int b = 0; b < kw; ++b) {
        for (int iy = 0; iy < h; ++iy) {
          const T* grow = gp.data() + static_cast<std::size_t>(iy * stride + a) * wo + b;
          T* dst = gathered.data() + static_cast<std::size_t>(iy) * w;
          for (int ix = 0; ix < w; ++ix) dst[ix] = grow[ix * stride];
        }
        for (int ci = 0; ci < cin; ++ci) {
          const std::size_t wi = ((static_cast<std::size_t>(ci) * cout + co) * kh + a) * kw + b;
          grads.weights.data()[wi] = dot(input.data() + ci * hw, gathered.data(), hw);
          if (need_input_grad) axpy(grads.input.data() + ci * hw, gathered.data(), weights.data()[wi], hw);
        }
      }
  }
  return grads;
}

template <typename T>
Tensor<T> trim_border(const Tensor<T>& input, int border) {
  require_rank(input.shape(), 3, "trim input");
  if (border == 0) return input;
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (border < 0 || h <= 2 * border || w <= 2 * border) {
    throw DimensionError("cannot trim " + std::to_string(border) + " pixels from a " + std::to_string(h) + "x" +
                         std::to_string(w) + " map");
  }
  Tensor<T> out({c, h - 2 * border, w - 2 * border});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h - 2 * border; ++y) {
      const T* row = &input.at(ch, y + border, border);
      std::copy(row, row + (w - 2 * border), &out.at(ch, y, 0));
    }
  return out;
}

template <typename T>
Tensor<T> trim_border_backward(const Tensor<T>& grad_out, int border) {
  require_rank(grad_out.shape(), 3, "trim grad_out");
  if (border == 0) return grad_out;
  const int c = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  Tensor<T> grad({c, h + 2 * border, w + 2 * border});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const T* row = &grad_out.at(ch, y, 0);
      std::copy(row, row + w, &grad.at(ch, y + border, border));
    }
  return grad;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw DimensionError("relu grad_out shape " + Tensor<T>::shape_string(grad_out.shape()) + " != input shape " +
                         Tensor<T>::shape_string(input.shape()));
  }
  Tensor<T> grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(input[i] > T(0))) grad[i] = T(0);
  return grad;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 3, "softmax logits");
  const int c = logits.dim(0);
  const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  Tensor<T> prob(logits.shape());
  for (std::size_t px = 0; px < hw; ++px) {
    T mx = logits[px];
    for (int k = 1; k < c; ++k) mx = std::max(mx, logits[k * hw + px]);
    T sum = 0;
    for (int k = 0; k < c; ++k) {
      const T e = std::exp(logits[k * hw + px] - mx);
      prob[k * hw + px] = e;
      sum += e;
    }
    for (int k = 0; k < c; ++k) prob[k * hw + px] /= sum;
  }
  return prob;
}

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const Mask& labels) {
  require_rank(logits.shape(), 3, "softmax logits");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (c < 2) throw DimensionError("softmax cross-entropy needs at least 2 classes, got " + std::to_string(c));
  if (labels.height != h || labels.width != w) {
    throw DimensionError("label map " + std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                         " does not match logits " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  SoftmaxLoss<T> r{T(0), Tensor<T>(logits.shape()), Tensor<T>(logits.shape())};
  double loss = 0.0;
  for (std::size_t px = 0; px < hw; ++px) {
    const int y = labels.data[px];
    if (y >= c) {
      throw DataError("label " + std::to_string(y) + " out of range [0, " + std::to_string(c - 1) + "] at pixel (y=" +
                      std::to_string(px / w) + ", x=" + std::to_string(px % w) + ")");
    }
    T mx = logits[px];
    for (int k = 1; k < c; ++k) mx = std::max(mx, logits[k * hw + px]);
    T sum = 0;
    for (int k = 0; k < c; ++k) {
      const T e = std::exp(logits[k * hw + px] - mx);
      r.prob[k * hw + px] = e;
      sum += e;
    }
    for (int k = 0; k < c; ++k) {
      const T p = r.prob[k * hw + px] / sum;
      r.prob[k * hw + px] = p;
      r.grad_logits[k * hw + px] = p - (k == y ? T(1) : T(0));
    }
    loss += static_cast<double>(std::log(sum)) - static_cast<double>(logits[y * hw + px] - mx);
  }
  r.loss = static_cast<T>(loss);
  return r;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& image, int target_h, int target_w) {
  require_rank(image.shape(), 3, "resize input");
  if (target_h < 1 || target_w < 1) throw DimensionError("resize target extents must be >= 1");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == target_h && w == target_w) return image;
  Tensor<T> out({c, target_h, target_w});
  const double sy = target_h > 1 ? static_cast<double>(h - 1) / (target_h - 1) : 0.0;
  const double sx = target_w > 1 ? static_cast<double>(w - 1) / (target_w - 1) : 0.0;
  std::vector<int> x0(target_w), x1(target_w);
  std::vector<double> fx(target_w);
  for (int x = 0; x < target_w; ++x) {
    const double src = x * sx;
    x0[x] = std::min(static_cast<int>(std::floor(src)), w - 1);
    x1[x] = std::min(x0[x] + 1, w - 1);
    fx[x] = src - x0[x];
  }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < target_h; ++y) {
      const double src = y * sy;
      const int y0 = std::min(static_cast<int>(std::floor(src)), h - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fy = src - y0;
      for (int x = 0; x < target_w; ++x) {
        const double top = (1.0 - fx[x]) * image.at(ch, y0, x0[x]) + fx[x] * image.at(ch, y0, x1[x]);
        const double bot = (1.0 - fx[x]) * image.at(ch, y1, x0[x]) + fx[x] * image.at(ch, y1, x1[x]);
        out.at(ch, y, x) = static_cast<T>((1.0 - fy) * top + fy * bot);
      }
    }
  return out;
}

Mask nearest_resize(const Mask& mask, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw DimensionError("resize target extents must be >= 1");
  if (mask.height == target_h && mask.width == target_w) return mask;
  Mask out(target_h, target_w);
  const double sy = target_h > 1 ? static_cast<double>(mask.height - 1) / (target_h - 1) : 0.0;
  const double sx = target_w > 1 ? static_cast<double>(mask.width - 1) / (target_w - 1) : 0.0;
  for (int y = 0; y < target_h; ++y) {
    const int yy = std::min(static_cast<int>(std::lround(y * sy)), mask.height - 1);
    for (int x = 0; x < target_w; ++x) {
      const int xx = std::min(static_cast<int>(std::lround(x * sx)), mask.width - 1);
      out(y, x) = mask(yy, xx);
    }
  }
  return out;
}

template <typename T>
Tensor<T> layer_forward(const LayerSpec& spec, const Tensor<T>& input, const Tensor<T>& weights,
                        std::span<const T> bias, std::vector<std::int32_t>* argmax) {
  switch (spec.kind) {
    case LayerKind::Conv: return conv2d_forward(input, weights, bias, spec.stride, spec.padding);
    case LayerKind::Deconv: return trim_border(deconv2d_forward(input, weights, bias, spec.stride), spec.padding);
    case LayerKind::MaxPool: {
      auto r = maxpool_forward(input, spec.kernel_h, spec.stride);
      if (argmax) *argmax = std::move(r.argmax);
      return std::move(r.output);
    }
    case LayerKind::Relu: return relu(input);
  }
  throw ConfigError("unknown layer kind");
}

template <typename T>
LayerGrads<T> layer_backward(const LayerSpec& spec, const Tensor<T>& input, const Tensor<T>& weights,
                             std::span<const std::int32_t> argmax, const Tensor<T>& grad_out, bool need_input_grad) {
  switch (spec.kind) {
    case LayerKind::Conv:
      return conv2d_backward(input, weights, grad_out, spec.stride, spec.padding, need_input_grad);
    case LayerKind::Deconv:
      return deconv2d_backward(input, weights, trim_border_backward(grad_out, spec.padding), spec.stride,
                               need_input_grad);
    case LayerKind::MaxPool: return {maxpool_backward(argmax, grad_out, input.shape()), {}, {}};
    case LayerKind::Relu: return {relu_backward(input, grad_out), {}, {}};
  }
  throw ConfigError("unknown layer kind");
}

#define MDSEG_INSTANTIATE(T)                                                                                        \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int, int);             \
  template LayerGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int, bool);    \
  template PoolResult<T> maxpool_forward(const Tensor<T>&, int, int);                                              \
  template Tensor<T> maxpool_backward(std::span<const std::int32_t>, const Tensor<T>&, const std::vector<int>&);   \
  template Tensor<T> deconv2d_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int);                \
  template LayerGrads<T> deconv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, bool);       \
  template Tensor<T> trim_border(const Tensor<T>&, int);                                                           \
  template Tensor<T> trim_border_backward(const Tensor<T>&, int);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> softmax(const Tensor<T>&);                                                                    \
  template SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>&, const Mask&);                                    \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);                                                  \
  template Tensor<T> layer_forward(const LayerSpec&, const Tensor<T>&, const Tensor<T>&, std::span<const T>,       \
                                   std::vector<std::int32_t>*);                                                    \
  template LayerGrads<T> layer_backward(const LayerSpec&, const Tensor<T>&, const Tensor<T>&,                      \
                                        std::span<const std::int32_t>, const Tensor<T>&, bool);

MDSEG_INSTANTIATE(float)
MDSEG_INSTANTIATE(double)

#undef MDSEG_INSTANTIATE

}  // namespace mdseg
