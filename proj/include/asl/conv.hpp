#pragma once

// Size-preserving 3x3 convolution and PReLU with hand-written backward passes.
//
// Convolution is cross-correlation (no kernel flip) with one voxel of zero
// padding: out[o](y, x) = b[o] + sum_{c,ky,kx} w[o][c][ky][kx] * in[c](y+ky-1, x+kx-1).
// Per sample it runs as im2col followed by a single matrix product.
//
// PReLU: y = x for x > 0, else a * x. The derivative at x == 0 is taken as 1.

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asl/errors.hpp"
#include "asl/tensor.hpp"

namespace asl {

inline constexpr std::size_t kKernelSize = 3;
inline constexpr std::size_t kKernelTaps = kKernelSize * kKernelSize;

template <typename T>
struct ConvLayer {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::vector<T> weights;      // (out_ch, in_ch, 3, 3)
  std::vector<T> bias;         // (out_ch)
  std::vector<T> prelu_slope;  // (out_ch), (1) when shared, empty when linear

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out, std::size_t slopes)
      : in_ch(in), out_ch(out), weights(in * out * kKernelTaps, T(0)), bias(out, T(0)), prelu_slope(slopes, T(0)) {}

  bool has_prelu() const { return !prelu_slope.empty(); }
  T slope(std::size_t c) const { return prelu_slope.size() == 1 ? prelu_slope[0] : prelu_slope[c]; }
  std::size_t parameter_count() const { return weights.size() + bias.size() + prelu_slope.size(); }

  void validate() const {
    if (weights.size() != in_ch * out_ch * kKernelTaps || bias.size() != out_ch ||
        !(prelu_slope.empty() || prelu_slope.size() == 1 || prelu_slope.size() == out_ch)) {
      throw ShapeMismatch("conv: inconsistent layer parameter shapes");
    }
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMajor<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMajor<T>>;

// col is (channels * 9) x (h * w); row r = (c * 3 + ky) * 3 + kx.
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
      for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
        T* row = col + ((c * kKernelSize + ky) * kKernelSize + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            dst[0] = T(0);
            std::copy(src, src + w - 1, dst + 1);
          } else if (kx == 1) {
            std::copy(src, src + w, dst);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col back into grad_in.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* grad_in) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = grad_in + c * hw;
    for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
      for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
        const T* row = col + ((c * kKernelSize + ky) * kKernelSize + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = row + y * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Single-sample forward on raw (channels, h, w) planes. `col` is scratch.
template <typename T>
void conv_forward_sample(const ConvLayer<T>& layer, const T* in, std::size_t h, std::size_t w, T* out,
                         std::vector<T>& col) {
  const std::size_t hw = h * w;
  const std::size_t k = layer.in_ch * kKernelTaps;
  col.resize(k * hw);
  detail::im2col(in, layer.in_ch, h, w, col.data());
  detail::MapConstMat<T> wm(layer.weights.data(), static_cast<Eigen::Index>(layer.out_ch), static_cast<Eigen::Index>(k));
  detail::MapConstMat<T> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
  detail::MapMat<T> om(out, static_cast<Eigen::Index>(layer.out_ch), static_cast<Eigen::Index>(hw));
  om.noalias() = wm * cm;
  for (std::size_t o = 0; o < layer.out_ch; ++o) om.row(static_cast<Eigen::Index>(o)).array() += layer.bias[o];
}

// Single-sample backward. Accumulates into grads.weights / grads.bias and,
// when grad_in is non-null, overwrites grad_in with dL/d(in).
template <typename T>
void conv_backward_sample(const ConvLayer<T>& layer, const T* in, std::size_t h, std::size_t w, const T* grad_out,
                          T* grad_in, ConvLayer<T>& grads, std::vector<T>& col) {
  const std::size_t hw = h * w;
  const auto k = static_cast<Eigen::Index>(layer.in_ch * kKernelTaps);
  const auto oc = static_cast<Eigen::Index>(layer.out_ch);
  const auto n = static_cast<Eigen::Index>(hw);
  col.resize(static_cast<std::size_t>(k) * hw);
  detail::im2col(in, layer.in_ch, h, w, col.data());
  detail::MapConstMat<T> g(grad_out, oc, n);
  detail::MapConstMat<T> cm(col.data(), k, n);
  detail::MapMat<T> gw(grads.weights.data(), oc, k);
  gw.noalias() += g * cm.transpose();
  for (Eigen::Index o = 0; o < oc; ++o) {
    T acc = T(0);
    const T* row = grad_out + static_cast<std::size_t>(o) * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += row[i];
    grads.bias[static_cast<std::size_t>(o)] += acc;
  }
  if (grad_in == nullptr) return;
  detail::MapConstMat<T> wm(layer.weights.data(), oc, k);
  detail::MapMat<T> gc(col.data(), k, n);
  gc.noalias() = wm.transpose() * g;
  std::fill(grad_in, grad_in + layer.in_ch * hw, T(0));
  detail::col2im_add(col.data(), layer.in_ch, h, w, grad_in);
}

// In-place PReLU over (channels, hw) planes.
template <typename T>
void prelu_forward_sample(const ConvLayer<T>& layer, const T* pre, std::size_t hw, T* out) {
  for (std::size_t c = 0; c < layer.out_ch; ++c) {
    const T a = layer.slope(c);
    const T* src = pre + c * hw;
    T* dst = out + c * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] > T(0) ? src[i] : a * src[i];
  }
}

// grad (dL/dy on entry) becomes dL/dx; slope gradient accumulates into grads.
template <typename T>
void prelu_backward_sample(const ConvLayer<T>& layer, const T* pre, std::size_t hw, T* grad, ConvLayer<T>& grads) {
  const bool shared = layer.prelu_slope.size() == 1;
  for (std::size_t c = 0; c < layer.out_ch; ++c) {
    const T a = layer.slope(c);
    const T* x = pre + c * hw;
    T* g = grad + c * hw;
    T gs = T(0);
    for (std::size_t i = 0; i < hw; ++i) {
      if (x[i] < T(0)) {
        gs += g[i] * x[i];
        g[i] *= a;
      }
    }
    grads.prelu_slope[shared ? 0 : c] += gs;
  }
}

template <typename T>
Tensor4<T> conv2d_same(const Tensor4<T>& x, const ConvLayer<T>& layer) {
  layer.validate();
  if (x.channels() != layer.in_ch) {
    throw ShapeMismatch("conv: input has " + std::to_string(x.channels()) + " channels, layer expects " +
                        std::to_string(layer.in_ch));
  }
  if (x.height() == 0 || x.width() == 0) throw ShapeMismatch("conv: empty spatial extent");
  Tensor4<T> out({x.batch(), layer.out_ch, x.height(), x.width()});
  std::vector<T> col;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    conv_forward_sample(layer, x.sample(n), x.height(), x.width(), out.sample(n), col);
  }
  return out;
}

template <typename T>
struct ConvGradients {
  Tensor4<T> grad_x;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

// Gradients of <grad_out, conv2d_same(x, layer)>.
template <typename T>
ConvGradients<T> conv2d_backward(const Tensor4<T>& x, const ConvLayer<T>& layer, const Tensor4<T>& grad_out) {
  layer.validate();
  if (x.channels() != layer.in_ch || grad_out.channels() != layer.out_ch || grad_out.batch() != x.batch() ||
      grad_out.height() != x.height() || grad_out.width() != x.width()) {
    throw ShapeMismatch("conv: backward shapes inconsistent with forward");
  }
  ConvLayer<T> acc(layer.in_ch, layer.out_ch, 0);
  Tensor4<T> gx(x.dims());
  std::vector<T> col;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    conv_backward_sample(layer, x.sample(n), x.height(), x.width(), grad_out.sample(n), gx.sample(n), acc, col);
  }
  return {std::move(gx), std::move(acc.weights), std::move(acc.bias)};
}

// Slopes are per channel (size = channels) or shared (size 1).
template <typename T>
Tensor4<T> prelu_forward(const Tensor4<T>& x, std::span<const T> slope) {
  if (slope.size() != 1 && slope.size() != x.channels()) throw ShapeMismatch("prelu: slope count mismatch");
  Tensor4<T> y(x.dims());
  const std::size_t hw = x.height() * x.width();
  for (std::size_t n = 0; n < x.batch(); ++n) {
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const T a = slope.size() == 1 ? slope[0] : slope[c];
      const T* src = x.sample(n) + c * hw;
      T* dst = y.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] > T(0) ? src[i] : a * src[i];
    }
  }
  return y;
}

template <typename T>
struct PreluGradients {
  Tensor4<T> grad_x;
  std::vector<T> grad_slope;
};

template <typename T>
PreluGradients<T> prelu_backward(const Tensor4<T>& x, std::span<const T> slope, const Tensor4<T>& grad_out) {
  if (slope.size() != 1 && slope.size() != x.channels()) throw ShapeMismatch("prelu: slope count mismatch");
  if (grad_out.dims() != x.dims()) throw ShapeMismatch("prelu: gradient shape mismatch");
  PreluGradients<T> g{grad_out, std::vector<T>(slope.size(), T(0))};
  const std::size_t hw = x.height() * x.width();
  for (std::size_t n = 0; n < x.batch(); ++n) {
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const std::size_t si = slope.size() == 1 ? 0 : c;
      const T* xv = x.sample(n) + c * hw;
      T* gv = g.grad_x.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        if (xv[i] < T(0)) {
          g.grad_slope[si] += gv[i] * xv[i];
          gv[i] *= slope[si];
        }
      }
    }
  }
  return g;
}

}  // namespace asl
