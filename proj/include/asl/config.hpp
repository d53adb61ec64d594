#pragma once

// Run configuration: a JSON document whose every key is optional (defaults
// fill the gaps) but whose unknown keys are rejected. Layout:
//
// {
//   "seed": 1,
//   "output": "run",
//   "acquisition": {"beta", "t1b_ms", "alpha", "tau_ms", "pld_ms"},
//   "phantom":     {"subjects", "slices", "width", "height", "voxel_mm": [x, y],
//                   "repetitions", "kappa", "pd_scale", "smoothing", "fwhm_mm"},
//   "subsets":     {"fractions": [...]},
//   "train":       {"learning_rate", "epochs", "minibatch", "patch_size", "augment_factor",
//                   "validation_fraction", "min_mask_fraction", "features", "prelu",
//                   "adam_beta1", "adam_beta2", "adam_eps", "output_init_scale", "threads"},
//   "loss":        {"lambda"},
//   "evaluate":    {"folds": [...]}   // held-out subject indices; empty = all
// }
//
// The master seed drives both phantom synthesis and training.

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asl/container.hpp"
#include "asl/errors.hpp"
#include "asl/kinetics.hpp"
#include "asl/model.hpp"
#include "asl/phantom.hpp"
#include "asl/pipeline.hpp"

namespace asl {

using Json = nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "run";
  AcquisitionParams acquisition{};
  PhantomConfig phantom{};
  SubsetSpec subsets{};
  TrainConfig train{};
  LossConfig loss{};
  std::vector<std::size_t> folds;

  // Copies the shared acquisition and seed into the per-module configs.
  PhantomConfig resolved_phantom() const {
    PhantomConfig p = phantom;
    p.acquisition = acquisition;
    return p;
  }

  ExperimentConfig experiment() const {
    ExperimentConfig e{acquisition, subsets, train, loss};
    e.train.seed = seed;
    return e;
  }

  void validate() const {
    acquisition.validate();
    subsets.validate();
    train.validate();
    loss.validate();
    if (phantom.subjects == 0 || phantom.slices == 0 || phantom.repetitions == 0) {
      throw ConfigError("config: phantom subjects, slices and repetitions must be positive");
    }
    if (!(phantom.kappa > 0.0) || !(phantom.pd_scale > 0.0) || !(phantom.fwhm_mm >= 0.0) ||
        !(phantom.voxel.x > 0.0) || !(phantom.voxel.y > 0.0)) {
      throw ConfigError("config: phantom kappa, pd_scale and voxel size must be > 0, fwhm_mm >= 0");
    }
    for (auto f : folds) {
      if (f >= phantom.subjects) throw ConfigError("config: fold index " + std::to_string(f) + " out of range");
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline void reject_unknown(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_key(const Json& obj, const char* key, const std::string& where, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + it->dump());
  }
}

inline std::string prelu_name(PreluMode m) { return m == PreluMode::shared ? "shared" : "per_channel"; }

inline PreluMode parse_prelu(const std::string& s) {
  if (s == "per_channel") return PreluMode::per_channel;
  if (s == "shared") return PreluMode::shared;
  throw ConfigError("config: prelu must be 'per_channel' or 'shared', got '" + s + "'");
}

}  // namespace detail

inline Json acquisition_to_json(const AcquisitionParams& a) {
  return {{"beta", a.beta}, {"t1b_ms", a.t1b_ms}, {"alpha", a.alpha}, {"tau_ms", a.tau_ms}, {"pld_ms", a.pld_ms}};
}

inline AcquisitionParams acquisition_from_json(const Json& j, const std::string& where = "acquisition") {
  detail::reject_unknown(j, where, {"beta", "t1b_ms", "alpha", "tau_ms", "pld_ms"});
  AcquisitionParams a;
  detail::read_key(j, "beta", where, a.beta);
  detail::read_key(j, "t1b_ms", where, a.t1b_ms);
  detail::read_key(j, "alpha", where, a.alpha);
  detail::read_key(j, "tau_ms", where, a.tau_ms);
  detail::read_key(j, "pld_ms", where, a.pld_ms);
  return a;
}

inline Json to_json(const RunConfig& c) {
  const auto& p = c.phantom;
  const auto& t = c.train;
  Json j;
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["acquisition"] = acquisition_to_json(c.acquisition);
  j["phantom"] = {{"subjects", p.subjects},       {"slices", p.slices},
                  {"width", p.width},             {"height", p.height},
                  {"voxel_mm", {p.voxel.x, p.voxel.y}},
                  {"repetitions", p.repetitions}, {"kappa", p.kappa},
                  {"pd_scale", p.pd_scale},       {"smoothing", p.smoothing},
                  {"fwhm_mm", p.fwhm_mm}};
  j["subsets"] = {{"fractions", c.subsets.fractions}};
  j["train"] = {{"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"minibatch", t.minibatch},
                {"patch_size", t.patch_size},
                {"augment_factor", t.augment_factor},
                {"validation_fraction", t.validation_fraction},
                {"min_mask_fraction", t.min_mask_fraction},
                {"features", t.features},
                {"prelu", detail::prelu_name(t.prelu)},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"output_init_scale", t.output_init_scale},
                {"threads", t.threads}};
  j["loss"] = {{"lambda", c.loss.lambda}};
  j["evaluate"] = {{"folds", c.folds}};
  return j;
}

inline RunConfig config_from_json(const Json& j) {
  using detail::read_key;
  detail::reject_unknown(j, "", {"seed", "output", "acquisition", "phantom", "subsets", "train", "loss", "evaluate"});
  RunConfig c;
  read_key(j, "seed", "", c.seed);
  read_key(j, "output", "", c.output);
  if (j.contains("acquisition")) c.acquisition = acquisition_from_json(j["acquisition"]);
  if (j.contains("phantom")) {
    const auto& p = j["phantom"];
    detail::reject_unknown(p, "phantom",
                           {"subjects", "slices", "width", "height", "voxel_mm", "repetitions", "kappa", "pd_scale",
                            "smoothing", "fwhm_mm"});
    read_key(p, "subjects", "phantom", c.phantom.subjects);
    read_key(p, "slices", "phantom", c.phantom.slices);
    read_key(p, "width", "phantom", c.phantom.width);
    read_key(p, "height", "phantom", c.phantom.height);
    if (p.contains("voxel_mm")) {
      const auto& v = p["voxel_mm"];
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw ConfigError("config: phantom.voxel_mm must be [x, y]");
      }
      c.phantom.voxel = {v[0].get<double>(), v[1].get<double>()};
    }
    read_key(p, "repetitions", "phantom", c.phantom.repetitions);
    read_key(p, "kappa", "phantom", c.phantom.kappa);
    read_key(p, "pd_scale", "phantom", c.phantom.pd_scale);
    read_key(p, "smoothing", "phantom", c.phantom.smoothing);
    read_key(p, "fwhm_mm", "phantom", c.phantom.fwhm_mm);
  }
  if (j.contains("subsets")) {
    detail::reject_unknown(j["subsets"], "subsets", {"fractions"});
    read_key(j["subsets"], "fractions", "subsets", c.subsets.fractions);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, "train",
                           {"learning_rate", "epochs", "minibatch", "patch_size", "augment_factor",
                            "validation_fraction", "min_mask_fraction", "features", "prelu", "adam_beta1",
                            "adam_beta2", "adam_eps", "output_init_scale", "threads"});
    auto& o = c.train;
    read_key(t, "learning_rate", "train", o.learning_rate);
    read_key(t, "epochs", "train", o.epochs);
    read_key(t, "minibatch", "train", o.minibatch);
    read_key(t, "patch_size", "train", o.patch_size);
    read_key(t, "augment_factor", "train", o.augment_factor);
    read_key(t, "validation_fraction", "train", o.validation_fraction);
    read_key(t, "min_mask_fraction", "train", o.min_mask_fraction);
    read_key(t, "features", "train", o.features);
    std::string prelu = detail::prelu_name(o.prelu);
    read_key(t, "prelu", "train", prelu);
    o.prelu = detail::parse_prelu(prelu);
    read_key(t, "adam_beta1", "train", o.adam_beta1);
    read_key(t, "adam_beta2", "train", o.adam_beta2);
    read_key(t, "adam_eps", "train", o.adam_eps);
    read_key(t, "output_init_scale", "train", o.output_init_scale);
    read_key(t, "threads", "train", o.threads);
  }
  if (j.contains("loss")) {
    detail::reject_unknown(j["loss"], "loss", {"lambda"});
    read_key(j["loss"], "lambda", "loss", c.loss.lambda);
  }
  if (j.contains("evaluate")) {
    detail::reject_unknown(j["evaluate"], "evaluate", {"folds"});
    read_key(j["evaluate"], "folds", "evaluate", c.folds);
  }
  c.train.seed = c.seed;
  return c;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config: cannot parse " + origin + ": " + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return config_from_json(parse_json_text(read_file(path), path.string()));
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline void save_config(const std::filesystem::path& path, const RunConfig& c) { write_file(path, dump_json(to_json(c))); }

}  // namespace asl
