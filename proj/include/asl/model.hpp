#pragma once

// Residual denoising network and the kinetic-model loss.
//
// Architecture: eight 3x3 conv layers with PReLU (1 -> F, then F -> F
// channels, F = 48) followed by one linear 3x3 conv F -> 1. The network
// predicts the noise image N from the noisy perfusion-weighted image; the
// clean estimate is input minus prediction.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "asl/conv.hpp"
#include "asl/errors.hpp"
#include "asl/image.hpp"
#include "asl/rng.hpp"
#include "asl/tensor.hpp"

namespace asl {

inline constexpr std::size_t kNetworkDepth = 9;
inline constexpr std::size_t kNetworkFeatures = 48;
inline constexpr double kInitialPreluSlope = 0.25;

enum class PreluMode { per_channel, shared };

template <typename T>
struct DenoiserWeights {
  std::vector<ConvLayer<T>> layers;
  PreluMode prelu_mode = PreluMode::per_channel;

  std::size_t features() const { return layers.empty() ? 0 : layers.front().out_ch; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  // Flat order: per layer, weights then bias then PReLU slopes.
  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weights.begin(), l.weights.end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
      out.insert(out.end(), l.prelu_slope.begin(), l.prelu_slope.end());
    }
    return out;
  }

  void assign(std::span<const T> flat) {
    if (flat.size() != parameter_count()) throw ShapeMismatch("model: flat parameter vector has wrong length");
    auto it = flat.begin();
    for (auto& l : layers) {
      for (auto* v : {&l.weights, &l.bias, &l.prelu_slope}) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
        it += static_cast<std::ptrdiff_t>(v->size());
      }
    }
  }

  DenoiserWeights zeros_like() const {
    DenoiserWeights z;
    z.prelu_mode = prelu_mode;
    for (const auto& l : layers) z.layers.emplace_back(l.in_ch, l.out_ch, l.prelu_slope.size());
    return z;
  }

  void set_zero() {
    for (auto& l : layers) {
      std::fill(l.weights.begin(), l.weights.end(), T(0));
      std::fill(l.bias.begin(), l.bias.end(), T(0));
      std::fill(l.prelu_slope.begin(), l.prelu_slope.end(), T(0));
    }
  }

  void add(const DenoiserWeights& other) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      auto& a = layers[k];
      const auto& b = other.layers[k];
      for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += b.weights[i];
      for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
      for (std::size_t i = 0; i < a.prelu_slope.size(); ++i) a.prelu_slope[i] += b.prelu_slope[i];
    }
  }

  void scale(T s) {
    for (auto& l : layers) {
      for (auto* v : {&l.weights, &l.bias, &l.prelu_slope}) {
        for (T& x : *v) x *= s;
      }
    }
  }

  template <typename U>
  DenoiserWeights<U> cast() const {
    DenoiserWeights<U> out;
    out.prelu_mode = prelu_mode;
    for (const auto& l : layers) {
      ConvLayer<U> c(l.in_ch, l.out_ch, l.prelu_slope.size());
      std::transform(l.weights.begin(), l.weights.end(), c.weights.begin(), [](T v) { return static_cast<U>(v); });
      std::transform(l.bias.begin(), l.bias.end(), c.bias.begin(), [](T v) { return static_cast<U>(v); });
      std::transform(l.prelu_slope.begin(), l.prelu_slope.end(), c.prelu_slope.begin(),
                     [](T v) { return static_cast<U>(v); });
      out.layers.push_back(std::move(c));
    }
    return out;
  }

  // Exactly 9 layers chaining 1 -> F -> ... -> F -> 1, PReLU on all but the last.
  void validate() const {
    if (layers.size() != kNetworkDepth) {
      throw ShapeMismatch("model: expected " + std::to_string(kNetworkDepth) + " layers, got " +
                          std::to_string(layers.size()));
    }
    const std::size_t f = features();
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      l.validate();
      const bool last = k + 1 == layers.size();
      const std::size_t want_in = k == 0 ? 1 : f;
      const std::size_t want_out = last ? 1 : f;
      if (l.in_ch != want_in || l.out_ch != want_out) {
        throw ShapeMismatch("model: layer " + std::to_string(k) + " has shape " + std::to_string(l.in_ch) + "->" +
                            std::to_string(l.out_ch));
      }
      if (last == l.has_prelu()) {
        throw ShapeMismatch(last ? "model: final layer must be linear" : "model: hidden layer missing PReLU");
      }
      for (T a : l.prelu_slope) {
        if (!std::isfinite(a)) throw NonFiniteValue("model: non-finite PReLU slope");
      }
    }
  }

  friend bool operator==(const DenoiserWeights&, const DenoiserWeights&) = default;
};

// He-normal weights, std = sqrt(2 / (in_ch * 9)); zero bias; PReLU slopes 0.25.
// output_scale multiplies the final layer's init std (0 starts the network at
// the identity denoiser, Ñ = 0).
template <typename T>
DenoiserWeights<T> init_denoiser(Rng& rng, PreluMode mode = PreluMode::per_channel,
                                 std::size_t features = kNetworkFeatures, double output_scale = 1.0) {
  if (features == 0) throw InvalidParameters("model: feature count must be >= 1");
  DenoiserWeights<T> w;
  w.prelu_mode = mode;
  for (std::size_t k = 0; k < kNetworkDepth; ++k) {
    const bool last = k + 1 == kNetworkDepth;
    const std::size_t in = k == 0 ? 1 : features;
    const std::size_t out = last ? 1 : features;
    const std::size_t slopes = last ? 0 : (mode == PreluMode::shared ? 1 : out);
    ConvLayer<T> l(in, out, slopes);
    const double sd = std::sqrt(2.0 / static_cast<double>(in * kKernelTaps)) * (last ? output_scale : 1.0);
    for (T& v : l.weights) v = static_cast<T>(sd * rng.normal());
    std::fill(l.prelu_slope.begin(), l.prelu_slope.end(), static_cast<T>(kInitialPreluSlope));
    w.layers.push_back(std::move(l));
  }
  return w;
}

// Per-sample activations kept for the backward pass.
template <typename T>
struct ForwardCache {
  std::size_t h = 0, w = 0;
  std::vector<std::vector<T>> inputs;  // input of each layer
  std::vector<std::vector<T>> pre;     // pre-activation of each PReLU layer
  std::vector<T> output;               // predicted residual, h * w
  std::vector<T> col;                  // im2col scratch
  std::vector<T> grad_a, grad_b;       // backward scratch
};

template <typename T>
void forward_sample(const DenoiserWeights<T>& net, const T* input, std::size_t h, std::size_t w,
                    ForwardCache<T>& cache) {
  const std::size_t hw = h * w;
  const std::size_t depth = net.layers.size();
  cache.h = h;
  cache.w = w;
  cache.inputs.resize(depth);
  cache.pre.resize(depth - 1);
  cache.inputs[0].assign(input, input + hw);
  for (std::size_t k = 0; k + 1 < depth; ++k) {
    const auto& l = net.layers[k];
    cache.pre[k].resize(l.out_ch * hw);
    conv_forward_sample(l, cache.inputs[k].data(), h, w, cache.pre[k].data(), cache.col);
    cache.inputs[k + 1].resize(l.out_ch * hw);
    prelu_forward_sample(l, cache.pre[k].data(), hw, cache.inputs[k + 1].data());
  }
  cache.output.resize(hw);
  conv_forward_sample(net.layers.back(), cache.inputs[depth - 1].data(), h, w, cache.output.data(), cache.col);
}

// Accumulates dL/dθ into grads given dL/d(output).
template <typename T>
void backward_sample(const DenoiserWeights<T>& net, ForwardCache<T>& cache, const T* grad_output,
                     DenoiserWeights<T>& grads) {
  const std::size_t h = cache.h, w = cache.w, hw = h * w;
  const std::size_t depth = net.layers.size();
  std::vector<T>& g = cache.grad_a;
  std::vector<T>& g_in = cache.grad_b;
  g.assign(grad_output, grad_output + hw);
  for (std::size_t k = depth; k-- > 0;) {
    const auto& l = net.layers[k];
    if (k + 1 < depth) prelu_backward_sample(l, cache.pre[k].data(), hw, g.data(), grads.layers[k]);
    T* gin = nullptr;
    if (k > 0) {
      g_in.resize(l.in_ch * hw);
      gin = g_in.data();
    }
    conv_backward_sample(l, cache.inputs[k].data(), h, w, g.data(), gin, grads.layers[k], cache.col);
    if (k > 0) std::swap(g, g_in);
  }
}

// Pre-activation branch pattern of the last forward pass (hash of sign bits).
template <typename T>
std::uint64_t activation_region(const ForwardCache<T>& cache) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : cache.pre) {
    for (T v : p) {
      h ^= v < T(0) ? 1u : 0u;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Ñ = R(dM_n | Θ) for a batch of single-channel images.
template <typename T>
Tensor4<T> forward_residual(const DenoiserWeights<T>& net, const Tensor4<T>& x) {
  net.validate();
  if (x.channels() != 1) throw ShapeMismatch("model: input must have 1 channel");
  if (x.height() == 0 || x.width() == 0) throw ShapeMismatch("model: empty input");
  Tensor4<T> out({x.batch(), 1, x.height(), x.width()});
  ForwardCache<T> cache;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    forward_sample(net, x.sample(n), x.height(), x.width(), cache);
    std::copy(cache.output.begin(), cache.output.end(), out.sample(n));
  }
  return out;
}

struct DenoiseResult {
  Image2D denoised;  // ΔM̃_c
  Image2D residual;  // Ñ in original units
};

// Runs the whole image through the network (no patching). `intensity_scale`
// is the normalization constant recorded at training time.
template <typename T>
DenoiseResult denoise_with_residual(const DenoiserWeights<T>& net, double intensity_scale, const Image2D& dm_noisy) {
  if (!(intensity_scale > 0.0) || !std::isfinite(intensity_scale)) {
    throw InvalidParameters("model: missing or invalid normalization constant");
  }
  net.validate();
  const std::size_t hw = dm_noisy.size();
  std::vector<T> input(hw);
  for (std::size_t i = 0; i < hw; ++i) input[i] = static_cast<T>(dm_noisy[i] / intensity_scale);
  ForwardCache<T> cache;
  forward_sample(net, input.data(), dm_noisy.height(), dm_noisy.width(), cache);
  DenoiseResult r{Image2D(dm_noisy.width(), dm_noisy.height(), dm_noisy.voxel_size()),
                  Image2D(dm_noisy.width(), dm_noisy.height(), dm_noisy.voxel_size())};
  for (std::size_t i = 0; i < hw; ++i) {
    r.residual[i] = static_cast<double>(cache.output[i]) * intensity_scale;
    r.denoised[i] = dm_noisy[i] - r.residual[i];
  }
  if (!r.denoised.all_finite()) throw NonFiniteValue("model: non-finite denoiser output");
  return r;
}

template <typename T>
Image2D denoise(const DenoiserWeights<T>& net, double intensity_scale, const Image2D& dm_noisy) {
  return denoise_with_residual(net, intensity_scale, dm_noisy).denoised;
}

// ---------------------------------------------------------------------------
// Kinetic-model loss

struct LossConfig {
  double lambda = 0.2;  // weight of the residual term; (1 - lambda) weighs the CBF term

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw InvalidParameters("model: lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// One training patch. dm_noisy and residual are in normalized units
// (divided by the dataset intensity scale); cbf_ref and scale are raw.
template <typename T>
struct TrainingSample {
  std::size_t size = 0;  // square patch side
  std::vector<T> dm_noisy;  // ΔM_n
  std::vector<T> residual;  // N = ΔM_n - ΔM_c
  std::vector<T> cbf_ref;   // f_t
  std::vector<T> scale;     // c_v, CBF per unit raw ΔM
  std::vector<T> mask;
  std::uint32_t subject = 0;
  std::uint32_t slice = 0;
  float fraction = 0.0f;

  std::size_t pixels() const { return size * size; }
};

struct LossTerms {
  double total = 0.0;
  double residual_mse = 0.0;  // mean (N - Ñ)^2
  double cbf_mse = 0.0;       // mean (f_t - c (ΔM_n - Ñ) s)^2
};

// loss = λ·mean_M (N − Ñ)² + (1 − λ)·mean_M (f_t − c·s·(ΔM_n − Ñ))² over
// masked voxels M, with s the intensity scale. When grad is non-empty it
// receives dL/dÑ (zero outside the mask).
template <typename T>
LossTerms kinetic_loss(std::span<const T> predicted, const TrainingSample<T>& sample, const LossConfig& cfg,
                       double intensity_scale, std::span<T> grad = {}) {
  cfg.validate();
  const std::size_t n = sample.pixels();
  if (predicted.size() != n || sample.dm_noisy.size() != n || sample.residual.size() != n ||
      sample.cbf_ref.size() != n || sample.scale.size() != n || sample.mask.size() != n ||
      (!grad.empty() && grad.size() != n)) {
    throw ShapeMismatch("model: loss inputs have inconsistent sizes");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) count += sample.mask[i] > T(0.5) ? 1 : 0;
  if (count == 0) throw EmptyMask("model: loss over an empty mask");

  const double lambda = cfg.lambda;
  const double inv = 1.0 / static_cast<double>(count);
  double res_acc = 0.0, cbf_acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sample.mask[i] > T(0.5))) {
      if (!grad.empty()) grad[i] = T(0);
      continue;
    }
    const double r = static_cast<double>(sample.residual[i]) - static_cast<double>(predicted[i]);
    const double cs = static_cast<double>(sample.scale[i]) * intensity_scale;
    const double e = static_cast<double>(sample.cbf_ref[i]) -
                     cs * (static_cast<double>(sample.dm_noisy[i]) - static_cast<double>(predicted[i]));
    res_acc += r * r;
    cbf_acc += e * e;
    if (!grad.empty()) grad[i] = static_cast<T>((-2.0 * lambda * r + 2.0 * (1.0 - lambda) * cs * e) * inv);
  }
  LossTerms t;
  t.residual_mse = res_acc * inv;
  t.cbf_mse = cbf_acc * inv;
  t.total = lambda * t.residual_mse + (1.0 - lambda) * t.cbf_mse;
  return t;
}

// Worker-owned scratch for batch gradient evaluation.
template <typename T>
struct GradientWorkspace {
  ForwardCache<T> cache;
  std::vector<T> grad_output;
};

// Mean batch loss and its gradient w.r.t. every network parameter.
// Per-sample gradients are computed independently (optionally on several
// threads) and summed in sample order, so the result does not depend on the
// thread count.
template <typename T>
double loss_gradient_wrt_weights(const DenoiserWeights<T>& net, std::span<const TrainingSample<T>* const> batch,
                                 const LossConfig& cfg, double intensity_scale, DenoiserWeights<T>& grads,
                                 std::size_t threads = 1) {
  if (batch.empty()) throw InvalidParameters("model: empty batch");
  cfg.validate();
  const std::size_t n = batch.size();
  std::vector<DenoiserWeights<T>> per_sample(n);
  std::vector<double> losses(n, 0.0);
  threads = std::max<std::size_t>(1, std::min(threads, n));

  auto run = [&](GradientWorkspace<T>& ws, std::size_t i) {
    const TrainingSample<T>& s = *batch[i];
    forward_sample(net, s.dm_noisy.data(), s.size, s.size, ws.cache);
    ws.grad_output.resize(s.pixels());
    losses[i] = kinetic_loss<T>(ws.cache.output, s, cfg, intensity_scale, ws.grad_output).total;
    per_sample[i] = net.zeros_like();
    backward_sample(net, ws.cache, ws.grad_output.data(), per_sample[i]);
  };

  if (threads == 1) {
    GradientWorkspace<T> ws;
    for (std::size_t i = 0; i < n; ++i) run(ws, i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      pool.reserve(threads);
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            GradientWorkspace<T> ws;
            for (std::size_t i = next++; i < n; i = next++) run(ws, i);
          } catch (...) {
            errors[t] = std::current_exception();
            next = n;
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  grads = net.zeros_like();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    grads.add(per_sample[i]);
    total += losses[i];
  }
  grads.scale(static_cast<T>(1.0 / static_cast<double>(n)));
  const double mean = total / static_cast<double>(n);
  if (!std::isfinite(mean)) throw NonFiniteValue("model: non-finite batch loss");
  return mean;
}

}  // namespace asl
