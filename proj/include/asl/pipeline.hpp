#pragma once

// Dataset assembly, training and the leave-one-subject-out experiment.

#include <algorithm>
#include <array>
#include <chrono>
#include <iterator>
#include <limits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "asl/adam.hpp"
#include "asl/errors.hpp"
#include "asl/image.hpp"
#include "asl/kinetics.hpp"
#include "asl/metrics.hpp"
#include "asl/model.hpp"
#include "asl/phantom.hpp"
#include "asl/rng.hpp"

namespace asl {

struct SubsetSpec {
  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8};

  void validate() const {
    if (fractions.empty()) throw InvalidParameters("pipeline: no subset fractions");
    for (double f : fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw InvalidParameters("pipeline: subset fraction outside (0, 1]");
    }
  }

  friend bool operator==(const SubsetSpec&, const SubsetSpec&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 40;
  std::size_t minibatch = 64;
  std::size_t patch_size = 40;
  std::size_t augment_factor = 4;    // dihedral elements per patch, identity included
  double validation_fraction = 0.1;  // tail of the shuffled set, loss monitoring only
  double min_mask_fraction = 0.25;   // patches below this masked share are dropped
  std::size_t features = kNetworkFeatures;
  PreluMode prelu = PreluMode::per_channel;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double output_init_scale = 0.0;  // final-layer init std multiplier; 0 starts at Ñ = 0
  std::size_t threads = 0;  // 0 = hardware concurrency; results do not depend on it
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0.0) || minibatch == 0 || patch_size == 0 || augment_factor == 0 || augment_factor > 8 ||
        features == 0) {
      throw InvalidParameters("pipeline: training configuration values must be positive (augment_factor <= 8)");
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw InvalidParameters("pipeline: validation_fraction must lie in [0, 1)");
    }
    if (!(min_mask_fraction >= 0.0 && min_mask_fraction <= 1.0)) {
      throw InvalidParameters("pipeline: min_mask_fraction must lie in [0, 1]");
    }
  }

  std::size_t resolved_threads() const {
    if (threads != 0) return threads;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Number of repetitions averaged for a subset fraction.
inline std::size_t subset_count(std::size_t count, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidParameters("pipeline: subset fraction outside (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  if (k == 0) {
    throw InvalidParameters("pipeline: fraction " + std::to_string(fraction) + " of " + std::to_string(count) +
                            " repetitions selects none");
  }
  return std::min(k, count);
}

// Voxelwise mean of round(fraction * count) distinct repetitions drawn
// uniformly without replacement; summed in ascending repetition order.
// fraction == 1 averages everything and draws nothing from rng.
inline Image2D average_subset(const PerfusionSeries& series, double fraction, Rng& rng) {
  if (series.count() == 0) throw InvalidParameters("pipeline: empty perfusion series");
  const std::size_t k = subset_count(series.count(), fraction);
  std::vector<std::size_t> idx(series.count());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k < series.count()) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(series.count() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
  }
  const Image2D& first = series.reps[idx[0]];
  Image2D out(first.width(), first.height(), first.voxel_size());
  for (std::size_t r : idx) {
    require_same_shape(first, series.reps[r], "pipeline");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += series.reps[r][i];
  }
  const double inv = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

inline Image2D average_all(const PerfusionSeries& series) {
  Rng unused(0);
  return average_subset(series, 1.0, unused);
}

// Top-left aligned starts of non-overlapping tiles, plus one edge-aligned
// tile when the extent is not a multiple of the patch size.
inline std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t patch) {
  if (patch == 0 || patch > extent) {
    throw InvalidParameters("pipeline: patch size " + std::to_string(patch) + " exceeds image extent " +
                            std::to_string(extent));
  }
  std::vector<std::size_t> s;
  for (std::size_t p = 0; p + patch <= extent; p += patch) s.push_back(p);
  if (s.back() + patch < extent) s.push_back(extent - patch);
  return s;
}

// Full-slice images a training patch is cut from. All in raw units.
struct PatchSource {
  const Image2D* dm_noisy;     // ΔM_n
  const Image2D* dm_complete;  // ΔM_c
  const Image2D* cbf_ref;      // f_t = quantify(ΔM_c)
  const Image2D* scale;        // c_v
  const Image2D* mask;
};

template <typename T = float>
std::vector<TrainingSample<T>> extract_patches(const PatchSource& src, std::size_t patch_size,
                                               double min_mask_fraction = 0.25, double intensity_scale = 1.0) {
  const Image2D& ref = *src.dm_noisy;
  for (const Image2D* im : {src.dm_complete, src.cbf_ref, src.scale, src.mask}) require_same_shape(ref, *im, "pipeline");
  const auto xs = tile_starts(ref.width(), patch_size);
  const auto ys = tile_starts(ref.height(), patch_size);
  const double inv_s = 1.0 / intensity_scale;
  std::vector<TrainingSample<T>> out;
  for (std::size_t y0 : ys) {
    for (std::size_t x0 : xs) {
      TrainingSample<T> s;
      s.size = patch_size;
      const std::size_t n = patch_size * patch_size;
      s.dm_noisy.resize(n);
      s.residual.resize(n);
      s.cbf_ref.resize(n);
      s.scale.resize(n);
      s.mask.resize(n);
      std::size_t masked = 0;
      for (std::size_t y = 0; y < patch_size; ++y) {
        for (std::size_t x = 0; x < patch_size; ++x) {
          const std::size_t i = y * patch_size + x;
          const std::size_t gx = x0 + x, gy = y0 + y;
          const double dn = (*src.dm_noisy)(gx, gy);
          s.dm_noisy[i] = static_cast<T>(dn * inv_s);
          s.residual[i] = static_cast<T>((dn - (*src.dm_complete)(gx, gy)) * inv_s);
          s.cbf_ref[i] = static_cast<T>((*src.cbf_ref)(gx, gy));
          s.scale[i] = static_cast<T>((*src.scale)(gx, gy));
          const bool m = (*src.mask)(gx, gy) > 0.5;
          s.mask[i] = m ? T(1) : T(0);
          masked += m ? 1 : 0;
        }
      }
      if (static_cast<double>(masked) < min_mask_fraction * static_cast<double>(n) || masked == 0) continue;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Element e of the dihedral group of the square: rotate by (e % 4) quarter
// turns, then mirror horizontally when e >= 4.
template <typename T>
std::vector<T> dihedral(std::span<const T> src, std::size_t n, unsigned e) {
  std::vector<T> cur(src.begin(), src.end()), tmp(src.size());
  for (unsigned r = 0; r < e % 4; ++r) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) tmp[y * n + x] = cur[x * n + (n - 1 - y)];
    }
    std::swap(cur, tmp);
  }
  if (e >= 4) {
    for (std::size_t y = 0; y < n; ++y) std::reverse(cur.begin() + static_cast<std::ptrdiff_t>(y * n),
                                                     cur.begin() + static_cast<std::ptrdiff_t>((y + 1) * n));
  }
  return cur;
}

template <typename T>
TrainingSample<T> transform_sample(const TrainingSample<T>& s, unsigned e) {
  TrainingSample<T> t = s;
  t.dm_noisy = dihedral<T>(s.dm_noisy, s.size, e);
  t.residual = dihedral<T>(s.residual, s.size, e);
  t.cbf_ref = dihedral<T>(s.cbf_ref, s.size, e);
  t.scale = dihedral<T>(s.scale, s.size, e);
  t.mask = dihedral<T>(s.mask, s.size, e);
  return t;
}

// Each sample becomes `factor` samples: itself plus factor - 1 distinct
// random non-identity dihedral elements, kept adjacent in the output.
template <typename T>
std::vector<TrainingSample<T>> augment(std::span<const TrainingSample<T>> samples, Rng& rng, std::size_t factor = 4) {
  if (factor == 0 || factor > 8) throw InvalidParameters("pipeline: augmentation factor must lie in [1, 8]");
  std::vector<TrainingSample<T>> out;
  out.reserve(samples.size() * factor);
  for (const auto& s : samples) {
    std::array<unsigned, 7> others{1, 2, 3, 4, 5, 6, 7};
    for (std::size_t i = 0; i + 1 < factor; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(7 - i));
      std::swap(others[i], others[j]);
    }
    out.push_back(s);
    for (std::size_t i = 0; i + 1 < factor; ++i) out.push_back(transform_sample(s, others[i]));
  }
  return out;
}

struct TrainingSet {
  std::vector<TrainingSample<float>> samples;
  double intensity_scale = 1.0;  // s: max |ΔM| over the training images
  std::size_t patch_size = 0;
};

// Per-slice quantities shared by training and evaluation.
struct SliceReference {
  CbfScaleMap scale;
  Image2D dm_complete;
  Image2D cbf_ref;
};

inline SliceReference slice_reference(const PhantomSlice& sl, const AcquisitionParams& acq) {
  SliceReference r{scale_map(acq, sl.si_pd, sl.tissue.mask), average_all(sl.repetitions), {}};
  r.cbf_ref = quantify_cbf(r.dm_complete, r.scale);
  return r;
}

// Pools every (subject, fraction) noise level into one shuffled set.
inline TrainingSet build_training_set(std::span<const PhantomSubject* const> subjects, const SubsetSpec& subsets,
                                      const TrainConfig& cfg, const AcquisitionParams& acq) {
  if (subjects.empty()) throw InvalidParameters("pipeline: no training subjects");
  subsets.validate();
  cfg.validate();

  struct Level {
    std::size_t subject, slice, fraction;
    const PhantomSlice* source;
    Image2D dm_noisy;
  };
  std::vector<SliceReference> refs;
  std::vector<std::size_t> ref_of_level;
  std::vector<Level> levels;
  double peak = 0.0;
  for (const PhantomSubject* subj : subjects) {
    for (std::size_t sl = 0; sl < subj->slices.size(); ++sl) {
      refs.push_back(slice_reference(subj->slices[sl], acq));
      for (double v : refs.back().dm_complete.values()) peak = std::max(peak, std::abs(v));
      for (std::size_t f = 0; f < subsets.fractions.size(); ++f) {
        Rng rng = make_stream(cfg.seed, "pipeline.subset", {subj->index, sl, f});
        levels.push_back({subj->index, sl, f, &subj->slices[sl], average_subset(subj->slices[sl].repetitions, subsets.fractions[f], rng)});
        ref_of_level.push_back(refs.size() - 1);
        for (double v : levels.back().dm_noisy.values()) peak = std::max(peak, std::abs(v));
      }
    }
  }
  if (!(peak > 0.0)) throw InvalidParameters("pipeline: training images are identically zero");

  TrainingSet set;
  set.intensity_scale = peak;
  set.patch_size = cfg.patch_size;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const Level& lv = levels[li];
    const SliceReference& ref = refs[ref_of_level[li]];
    PatchSource src{&lv.dm_noisy, &ref.dm_complete, &ref.cbf_ref, &ref.scale.scale, &lv.source->tissue.mask};
    auto patches = extract_patches<float>(src, cfg.patch_size, cfg.min_mask_fraction, peak);
    for (auto& p : patches) {
      p.subject = static_cast<std::uint32_t>(lv.subject);
      p.slice = static_cast<std::uint32_t>(lv.slice);
      p.fraction = static_cast<float>(subsets.fractions[lv.fraction]);
    }
    Rng rng = make_stream(cfg.seed, "pipeline.augment", {lv.subject, lv.slice, lv.fraction});
    auto aug = augment<float>(patches, rng, cfg.augment_factor);
    std::move(aug.begin(), aug.end(), std::back_inserter(set.samples));
  }
  if (set.samples.empty()) throw InvalidParameters("pipeline: no training patches survive mask filtering");
  Rng rng = make_stream(cfg.seed, "pipeline.shuffle");
  shuffle(set.samples.begin(), set.samples.end(), rng);
  return set;
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  // NaN when no validation split
  double seconds = 0.0;
};

struct TrainResult {
  DenoiserWeights<float> weights;
  std::vector<EpochStats> history;
  double intensity_scale = 1.0;
  double lambda = 0.2;
};

using EpochCallback = std::function<void(const EpochStats&)>;

inline double evaluate_loss(const DenoiserWeights<float>& net, std::span<const TrainingSample<float>> samples,
                            const LossConfig& loss, double intensity_scale) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  ForwardCache<float> cache;
  double acc = 0.0;
  for (const auto& s : samples) {
    forward_sample(net, s.dm_noisy.data(), s.size, s.size, cache);
    acc += kinetic_loss<float>(cache.output, s, loss, intensity_scale).total;
  }
  return acc / static_cast<double>(samples.size());
}

// Minibatch Adam. Deterministic for a given (dataset, config).
inline TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const LossConfig& loss,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  loss.validate();
  if (data.samples.empty()) throw InvalidParameters("pipeline: empty training set");

  const std::size_t total = data.samples.size();
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(total)));
  if (n_val >= total) n_val = 0;
  const std::size_t n_train = total - n_val;
  std::span<const TrainingSample<float>> validation(data.samples.data() + n_train, n_val);

  Rng init = make_stream(cfg.seed, "model.init");
  TrainResult result{init_denoiser<float>(init, cfg.prelu, cfg.features, cfg.output_init_scale), {}, data.intensity_scale, loss.lambda};
  DenoiserWeights<float>& net = result.weights;
  AdamState<float> adam(net.parameter_count(), {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  DenoiserWeights<float> grads;
  std::vector<std::size_t> order(n_train);
  std::vector<const TrainingSample<float>*> batch;
  const std::size_t threads = cfg.resolved_threads();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_stream(cfg.seed, "pipeline.epoch", {epoch});
    shuffle(order.begin(), order.end(), rng);

    double acc = 0.0;
    std::size_t b = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.minibatch, ++b) {
      const std::size_t end = std::min(n_train, start + cfg.minibatch);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.samples[order[i]]);
      double batch_loss = std::numeric_limits<double>::quiet_NaN();
      std::vector<float> params = net.flatten();
      try {
        batch_loss = loss_gradient_wrt_weights<float>(net, batch, loss, data.intensity_scale, grads, threads);
        const std::vector<float> g = grads.flatten();
        adam_step<float>(params, g, adam);
      } catch (const NonFiniteValue&) {
        throw DivergenceError(epoch, b, batch_loss);
      }
      net.assign(params);
      acc += batch_loss * static_cast<double>(end - start);
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = acc / static_cast<double>(n_train);
    st.validation_loss = evaluate_loss(net, validation, loss, data.intensity_scale);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(st.train_loss)) throw DivergenceError(epoch, b, st.train_loss);
    result.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ExperimentConfig {
  AcquisitionParams acquisition{};
  SubsetSpec subsets{};
  TrainConfig train{};
  LossConfig loss{};
};

inline constexpr const char* kMethodAveraging = "averaging";
inline constexpr const char* kMethodProposed = "proposed";

struct DenoisedSlice {
  Image2D dm_noisy, dm_denoised, cbf_noisy, cbf_denoised;
};

// Subset average and its denoised version for one slice at one fraction.
inline DenoisedSlice denoise_slice(const DenoiserWeights<float>& net, double intensity_scale, const PhantomSlice& sl,
                                   const SliceReference& ref, double fraction, Rng& rng) {
  DenoisedSlice d;
  d.dm_noisy = average_subset(sl.repetitions, fraction, rng);
  d.dm_denoised = denoise(net, intensity_scale, d.dm_noisy);
  d.cbf_noisy = quantify_cbf(d.dm_noisy, ref.scale);
  d.cbf_denoised = quantify_cbf(d.dm_denoised, ref.scale);
  return d;
}

inline Rng evaluation_stream(std::uint64_t seed, std::size_t subject, std::size_t slice, std::size_t fraction_index) {
  return make_stream(seed, "pipeline.eval", {subject, slice, fraction_index});
}

// Metric rows (averaging + proposed) for one subject at every fraction.
// Masked voxels of all slices are pooled.
inline std::vector<MetricsRow> evaluate_subject(const DenoiserWeights<float>& net, double intensity_scale,
                                                const PhantomSubject& subject, const ExperimentConfig& cfg) {
  std::vector<SliceReference> refs;
  for (const auto& sl : subject.slices) refs.push_back(slice_reference(sl, cfg.acquisition));

  std::vector<MetricsRow> rows;
  for (std::size_t fi = 0; fi < cfg.subsets.fractions.size(); ++fi) {
    const double f = cfg.subsets.fractions[fi];
    struct Pool {
      std::vector<double> dm_ref, dm_truth, cbf_ref, cbf_truth, dm_avg, dm_den, cbf_avg, cbf_den;
    } pool;
    for (std::size_t s = 0; s < subject.slices.size(); ++s) {
      const PhantomSlice& sl = subject.slices[s];
      Rng rng = evaluation_stream(cfg.train.seed, subject.index, s, fi);
      const DenoisedSlice d = denoise_slice(net, intensity_scale, sl, refs[s], f, rng);
      const Image2D& mask = sl.tissue.mask;
      auto append = [&](std::vector<double>& dst, const Image2D& img) {
        const auto v = masked_values(img, mask);
        dst.insert(dst.end(), v.begin(), v.end());
      };
      append(pool.dm_ref, refs[s].dm_complete);
      append(pool.dm_truth, sl.dm_clean);
      append(pool.cbf_ref, refs[s].cbf_ref);
      append(pool.cbf_truth, sl.cbf_truth);
      append(pool.dm_avg, d.dm_noisy);
      append(pool.dm_den, d.dm_denoised);
      append(pool.cbf_avg, d.cbf_noisy);
      append(pool.cbf_den, d.cbf_denoised);
    }
    auto row = [&](const char* method, std::optional<double> lambda, const std::vector<double>& dm,
                   const std::vector<double>& cbf) {
      MetricsRow r;
      r.subject = subject.index;
      r.fraction = f;
      r.method = method;
      r.lambda = lambda;
      r.psnr = psnr(pool.dm_ref, dm);
      r.rmse = rmse(pool.cbf_ref, cbf);
      r.ccc = ccc(pool.cbf_ref, cbf);
      r.n_voxels = dm.size();
      r.psnr_truth = psnr(pool.dm_truth, dm);
      r.rmse_truth = rmse(pool.cbf_truth, cbf);
      r.ccc_truth = ccc(pool.cbf_truth, cbf);
      return r;
    };
    rows.push_back(row(kMethodAveraging, std::nullopt, pool.dm_avg, pool.cbf_avg));
    rows.push_back(row(kMethodProposed, cfg.loss.lambda, pool.dm_den, pool.cbf_den));
  }
  return rows;
}

struct FoldResult {
  std::size_t held_out = 0;
  TrainResult training;
  std::vector<MetricsRow> rows;
};

struct LooResult {
  std::vector<FoldResult> folds;
  MetricsReport report;
};

using FoldCallback = std::function<void(const FoldResult&)>;

// Train on all subjects but one, evaluate on the held-out one, for every
// subject (or only the listed folds).
inline LooResult leave_one_out(std::span<const PhantomSubject> subjects, const ExperimentConfig& cfg,
                               const FoldCallback& on_fold = {}, std::span<const std::size_t> only_folds = {}) {
  if (subjects.size() < 2) throw InvalidParameters("pipeline: leave-one-out needs at least 2 subjects");
  LooResult out;
  for (std::size_t h = 0; h < subjects.size(); ++h) {
    if (!only_folds.empty() && std::find(only_folds.begin(), only_folds.end(), h) == only_folds.end()) continue;
    std::vector<const PhantomSubject*> train_subjects;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (i != h) train_subjects.push_back(&subjects[i]);
    }
    const TrainingSet set = build_training_set(train_subjects, cfg.subsets, cfg.train, cfg.acquisition);
    FoldResult fold;
    fold.held_out = h;
    fold.training = train(set, cfg.train, cfg.loss);
    fold.rows = evaluate_subject(fold.training.weights, fold.training.intensity_scale, subjects[h], cfg);
    out.report.rows.insert(out.report.rows.end(), fold.rows.begin(), fold.rows.end());
    if (on_fold) on_fold(fold);
    out.folds.push_back(std::move(fold));
  }
  out.report.summary = summarize(out.report.rows);
  return out;
}

}  // namespace asl
