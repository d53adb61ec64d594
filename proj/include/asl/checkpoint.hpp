#pragma once

// Self-describing weight checkpoint directory:
//
//   <dir>/checkpoint.json        architecture, lambda, intensity scale s,
//                                acquisition, per-tensor {path, checksum}
//   <dir>/layer_0K_weights.aslt  float32 (out, in, 3, 3)
//   <dir>/layer_0K_bias.aslt     float32 (out)
//   <dir>/layer_0K_prelu.aslt    float32 (out) or (1); absent for the final layer
//
// Everything needed to run the denoiser on new data lives here.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "asl/config.hpp"
#include "asl/container.hpp"
#include "asl/manifest.hpp"
#include "asl/model.hpp"

namespace asl {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kArchitectureName = "residual_fcn";

struct Checkpoint {
  DenoiserWeights<float> weights;
  double lambda = 0.2;
  double intensity_scale = 1.0;
  AcquisitionParams acquisition{};

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  ck.weights.validate();
  Json layers = Json::array();
  for (std::size_t k = 0; k < ck.weights.layers.size(); ++k) {
    const auto& l = ck.weights.layers[k];
    const std::string stem = detail::indexed_name("layer_", k, 2);
    auto vec = [](const std::vector<float>& v, std::vector<std::uint32_t> dims) {
      return TensorContainer{DType::f32, std::move(dims), std::vector<double>(v.begin(), v.end())};
    };
    const auto in = static_cast<std::uint32_t>(l.in_ch);
    const auto out = static_cast<std::uint32_t>(l.out_ch);
    Json jl = {{"in_channels", l.in_ch}, {"out_channels", l.out_ch}};
    jl["weights"] = detail::file_entry(dir, stem + "_weights.aslt", vec(l.weights, {out, in, 3, 3}));
    jl["bias"] = detail::file_entry(dir, stem + "_bias.aslt", vec(l.bias, {out}));
    if (l.has_prelu()) {
      jl["prelu"] = detail::file_entry(dir, stem + "_prelu.aslt",
                                       vec(l.prelu_slope, {static_cast<std::uint32_t>(l.prelu_slope.size())}));
    }
    layers.push_back(jl);
  }
  Json j = {{"version", kCheckpointVersion},
            {"architecture",
             {{"name", kArchitectureName},
              {"depth", ck.weights.layers.size()},
              {"features", ck.weights.features()},
              {"kernel", 3},
              {"padding", "zero"},
              {"prelu", detail::prelu_name(ck.weights.prelu_mode)},
              {"output", "residual"}}},
            {"lambda", ck.lambda},
            {"intensity_scale", ck.intensity_scale},
            {"acquisition", acquisition_to_json(ck.acquisition)},
            {"layers", layers}};
  write_file(dir / "checkpoint.json", dump_json(j));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto index = dir / "checkpoint.json";
  const Json j = detail::read_json_file(index);
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) throw ManifestError("checkpoint: unsupported version");
    const auto& arch = j.at("architecture");
    if (arch.at("name").get<std::string>() != kArchitectureName) {
      throw ManifestError("checkpoint: unknown architecture " + arch.at("name").dump());
    }
    Checkpoint ck;
    ck.lambda = j.at("lambda").get<double>();
    ck.intensity_scale = j.at("intensity_scale").get<double>();
    ck.acquisition = acquisition_from_json(j.at("acquisition"));
    ck.weights.prelu_mode = detail::parse_prelu(arch.at("prelu").get<std::string>());
    for (const auto& jl : j.at("layers")) {
      const auto in = jl.at("in_channels").get<std::size_t>();
      const auto out = jl.at("out_channels").get<std::size_t>();
      auto read = [&](const char* key, std::size_t want) {
        const auto t = detail::load_entry(dir, jl.at(key), key);
        if (t.values.size() != want) throw ShapeMismatch(std::string("checkpoint: wrong size for ") + key);
        return std::vector<float>(t.values.begin(), t.values.end());
      };
      ConvLayer<float> l;
      l.in_ch = in;
      l.out_ch = out;
      l.weights = read("weights", in * out * kKernelTaps);
      l.bias = read("bias", out);
      if (jl.contains("prelu")) {
        l.prelu_slope = read("prelu", ck.weights.prelu_mode == PreluMode::shared ? 1 : out);
      }
      ck.weights.layers.push_back(std::move(l));
    }
    if (ck.weights.layers.size() != arch.at("depth").get<std::size_t>()) {
      throw ShapeMismatch("checkpoint: layer count does not match architecture depth");
    }
    ck.weights.validate();
    if (!(std::isfinite(ck.intensity_scale) && ck.intensity_scale > 0.0)) {
      throw ManifestError("checkpoint: intensity_scale must be finite and > 0");
    }
    return ck;
  } catch (const Json::exception& e) {
    throw ManifestError("checkpoint: malformed " + index.string() + ": " + e.what());
  }
}

}  // namespace asl
