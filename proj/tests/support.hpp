#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asl/gradcheck.hpp"
#include "asl/model.hpp"
#include "asl/rng.hpp"

namespace asl::testing {

// Random patch in the units used during training: normalized ΔM (|ΔM| ~ 0.3),
// scale c_v of a PD ~ 70-85 voxel, reference CBF close to c·s·ΔM_c.
inline TrainingSample<double> random_sample(Rng& rng, std::size_t size, double intensity_scale,
                                            double masked_share = 0.8) {
  TrainingSample<double> s;
  s.size = size;
  const std::size_t n = size * size;
  s.dm_noisy.resize(n);
  s.residual.resize(n);
  s.cbf_ref.resize(n);
  s.scale.resize(n);
  s.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double clean = 0.3 + 0.1 * rng.normal();
    s.residual[i] = 0.2 * rng.normal();
    s.dm_noisy[i] = clean + s.residual[i];
    s.scale[i] = 11764.33 / (70.0 + 15.0 * rng.uniform());
    s.cbf_ref[i] = s.scale[i] * intensity_scale * clean + rng.normal();
    s.mask[i] = rng.uniform() < masked_share ? 1.0 : 0.0;
  }
  s.mask[0] = 1.0;
  return s;
}

// Random weights with non-trivial slopes and biases so that every parameter
// has a visible gradient.
inline DenoiserWeights<double> random_network(Rng& rng, std::size_t features, PreluMode mode = PreluMode::per_channel) {
  DenoiserWeights<double> net = init_denoiser<double>(rng, mode, features, 1.0);
  for (auto& l : net.layers) {
    for (double& b : l.bias) b = 0.1 * rng.normal();
    for (double& a : l.prelu_slope) a = 0.1 + 0.3 * rng.uniform();
  }
  return net;
}

// Mean kinetic loss over `samples` as a function of the flat parameter
// vector, tagged with the activation pattern.
struct NetworkLoss {
  const DenoiserWeights<double>* base;
  std::span<const TrainingSample<double>> samples;
  LossConfig cfg;
  double intensity_scale;

  RegionSample operator()(std::span<const double> flat) const {
    DenoiserWeights<double> net = *base;
    net.assign(flat);
    ForwardCache<double> cache;
    double total = 0.0;
    std::uint64_t region = 0;
    for (const auto& s : samples) {
      forward_sample(net, s.dm_noisy.data(), s.size, s.size, cache);
      total += kinetic_loss<double>(cache.output, s, cfg, intensity_scale).total;
      region = region * 0x9e3779b97f4a7c15ULL + activation_region(cache);
    }
    return {total / static_cast<double>(samples.size()), region};
  }
};

// Analytic gradient vs central differences on the given coordinates (all
// when empty).
inline FiniteDiffResult check_network_gradient(const DenoiserWeights<double>& net,
                                               std::span<const TrainingSample<double>> samples, const LossConfig& cfg,
                                               double intensity_scale, double h,
                                               std::span<const std::size_t> coords = {}) {
  std::vector<const TrainingSample<double>*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  DenoiserWeights<double> grads;
  loss_gradient_wrt_weights<double>(net, batch, cfg, intensity_scale, grads);
  const std::vector<double> flat = net.flatten();
  const std::vector<double> analytic = grads.flatten();
  return finite_diff_check(NetworkLoss{&net, samples, cfg, intensity_scale}, flat, analytic, h, coords);
}

// Every bias and PReLU slope plus `weights_per_layer` random weights of each
// layer (all of them when the layer has fewer).
inline std::vector<std::size_t> sampled_coordinates(const DenoiserWeights<double>& net, std::size_t weights_per_layer,
                                                    Rng& rng) {
  std::vector<std::size_t> out;
  std::size_t offset = 0;
  for (const auto& l : net.layers) {
    const std::size_t nw = l.weights.size();
    if (nw <= weights_per_layer) {
      for (std::size_t i = 0; i < nw; ++i) out.push_back(offset + i);
    } else {
      for (std::size_t k = 0; k < weights_per_layer; ++k) out.push_back(offset + rng.below(nw));
    }
    offset += nw;
    for (std::size_t i = 0; i < l.bias.size() + l.prelu_slope.size(); ++i) out.push_back(offset + i);
    offset += l.bias.size() + l.prelu_slope.size();
  }
  return out;
}

}  // namespace asl::testing
