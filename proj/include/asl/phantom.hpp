#pragma once

// Synthetic pCASL subjects: procedural tissue maps -> ground-truth CBF ->
// SI_PD -> clean dM -> noisy control/label subtraction repetitions.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "asl/errors.hpp"
#include "asl/image.hpp"
#include "asl/kinetics.hpp"
#include "asl/rng.hpp"

namespace asl {

inline constexpr double kWhiteMatterCbf = 20.0;  // mL/100g/min
inline constexpr double kGreyMatterCbf = 65.0;

struct TissueMaps {
  Image2D wm;    // partial-volume fraction
  Image2D gm;    // partial-volume fraction
  Image2D mask;  // 1 inside brain, 0 outside
};

// Ordered pairwise control/label subtractions of one slice.
struct PerfusionSeries {
  std::vector<Image2D> reps;

  std::size_t count() const { return reps.size(); }
};

struct PhantomSlice {
  TissueMaps tissue;
  Image2D si_pd;
  Image2D cbf_truth;
  Image2D dm_clean;
  Image2D noise_std;
  PerfusionSeries repetitions;  // smoothed when PhantomConfig::smoothing is on
};

struct PhantomSubject {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::vector<PhantomSlice> slices;
};

struct PhantomConfig {
  std::size_t subjects = 4;
  std::size_t slices = 4;
  std::size_t width = 128;
  std::size_t height = 128;
  VoxelSize voxel{2.7, 2.7};
  std::size_t repetitions = 100;
  double kappa = 0.005;
  double pd_scale = 100.0;
  bool smoothing = true;
  double fwhm_mm = 4.0;
  // Synthetic acquisitions use tau = 1600 ms and PLD = 2200 ms.
  AcquisitionParams acquisition{};

  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

namespace detail {

struct SubjectShape {
  double semi_x_mm, semi_y_mm;  // brain outline
  double wm_radius;             // WM/GM boundary in normalized radius
  std::array<double, 3> fold_phase;
  double deep_gm_shift;         // lateral offset of the deep grey nuclei, normalized
};

inline SubjectShape subject_shape(std::uint64_t seed) {
  Rng rng = make_stream(seed, "phantom.shape");
  auto jitter = [&](double amplitude) { return 1.0 + amplitude * (2.0 * rng.uniform() - 1.0); };
  SubjectShape s{};
  s.semi_x_mm = 72.0 * jitter(0.06);
  s.semi_y_mm = 88.0 * jitter(0.06);
  s.wm_radius = 0.80 * jitter(0.03);
  for (auto& p : s.fold_phase) p = 2.0 * std::numbers::pi * rng.uniform();
  s.deep_gm_shift = 0.26 * jitter(0.1);
  return s;
}

enum class Tissue { background, wm, gm };

inline Tissue classify(const SubjectShape& s, double slice_pos, double xmm, double ymm) {
  // Head narrows away from the central slice.
  const double shrink = std::sqrt(1.0 - 0.35 * slice_pos * slice_pos);
  const double u = xmm / (s.semi_x_mm * shrink);
  const double v = ymm / (s.semi_y_mm * shrink);
  const double rho = std::sqrt(u * u + v * v);
  if (rho > 1.0) return Tissue::background;

  const double theta = std::atan2(v, u);
  // Gyral folding of the cortical ribbon; the folds drift from slice to slice.
  const double wm_edge = s.wm_radius + 0.05 * std::sin(7.0 * theta + s.fold_phase[0] + 2.0 * slice_pos) +
                         0.03 * std::sin(11.0 * theta + s.fold_phase[1] - 3.0 * slice_pos) +
                         0.02 * std::sin(13.0 * theta + s.fold_phase[2] + 5.0 * slice_pos) -
                         0.04 * std::abs(slice_pos);
  if (rho > wm_edge) return Tissue::gm;

  // Deep grey nuclei, present near the central slices.
  if (std::abs(slice_pos) < 0.6) {
    for (double side : {-1.0, 1.0}) {
      const double du = (u - side * s.deep_gm_shift) / 0.12;
      const double dv = (v - 0.05) / 0.20;
      if (du * du + dv * dv <= 1.0) return Tissue::gm;
    }
  }
  return Tissue::wm;
}

}  // namespace detail

// Procedural brain-like slice: elliptical outline, folded outer GM ribbon, WM
// core with deep GM nuclei. Partial volumes come from 4x4 supersampling; the
// mask keeps voxels whose tissue coverage is at least one half.
// slice_pos in [-1, 1] selects the axial level.
inline TissueMaps generate_geometry(std::uint64_t seed, std::size_t width, std::size_t height, VoxelSize voxel,
                                    double slice_pos = 0.0) {
  if (width < 64 || height < 64) {
    throw GeometryError("phantom: grid must be at least 64x64, got " + std::to_string(width) + "x" +
                        std::to_string(height));
  }
  if (!(voxel.x > 0.0 && voxel.y > 0.0)) throw GeometryError("phantom: voxel size must be positive");
  if (!(slice_pos >= -1.0 && slice_pos <= 1.0)) throw GeometryError("phantom: slice position outside [-1, 1]");

  const detail::SubjectShape shape = detail::subject_shape(seed);
  constexpr int kSub = 4;
  TissueMaps t{Image2D(width, height, voxel), Image2D(width, height, voxel), Image2D(width, height, voxel)};
  const double cx = 0.5 * static_cast<double>(width);
  const double cy = 0.5 * static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      int n_wm = 0, n_gm = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = (static_cast<double>(x) + (sx + 0.5) / kSub - cx) * voxel.x;
          const double py = (static_cast<double>(y) + (sy + 0.5) / kSub - cy) * voxel.y;
          switch (detail::classify(shape, slice_pos, px, py)) {
            case detail::Tissue::wm: ++n_wm; break;
            case detail::Tissue::gm: ++n_gm; break;
            case detail::Tissue::background: break;
          }
        }
      }
      constexpr double kSamples = kSub * kSub;
      if (n_wm + n_gm >= kSub * kSub / 2) {
        t.wm(x, y) = n_wm / kSamples;
        t.gm(x, y) = n_gm / kSamples;
        t.mask(x, y) = 1.0;
      }
    }
  }
  return t;
}

inline Image2D ground_truth_cbf(const TissueMaps& tissue) {
  require_same_shape(tissue.wm, tissue.gm, "phantom");
  require_same_shape(tissue.wm, tissue.mask, "phantom");
  Image2D cbf(tissue.wm.width(), tissue.wm.height(), tissue.wm.voxel_size());
  for (std::size_t i = 0; i < cbf.size(); ++i) {
    if (in_mask(tissue.mask, i)) cbf[i] = kWhiteMatterCbf * tissue.wm[i] + kGreyMatterCbf * tissue.gm[i];
  }
  return cbf;
}

inline Image2D synth_si_pd(const TissueMaps& tissue, double pd_scale) {
  if (!(pd_scale > 0.0) || !std::isfinite(pd_scale)) {
    throw InvalidParameters("phantom: pd_scale must be > 0, got " + std::to_string(pd_scale));
  }
  require_same_shape(tissue.wm, tissue.mask, "phantom");
  Image2D pd(tissue.wm.width(), tissue.wm.height(), tissue.wm.voxel_size());
  for (std::size_t i = 0; i < pd.size(); ++i) {
    if (!in_mask(tissue.mask, i)) continue;
    if (tissue.wm[i] + tissue.gm[i] <= 0.0) {
      throw GeometryError("phantom: masked voxel " + std::to_string(i) + " has no tissue");
    }
    pd[i] = pd_scale * (0.70 * tissue.wm[i] + 0.85 * tissue.gm[i]);
  }
  return pd;
}

// Per-voxel noise std of a single subtraction, proportional to SI_PD (which is
// already zero outside the mask).
inline Image2D noise_std_map(const Image2D& si_pd, double kappa) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) {
    throw InvalidParameters("phantom: kappa must be > 0, got " + std::to_string(kappa));
  }
  Image2D sd(si_pd.width(), si_pd.height(), si_pd.voxel_size());
  for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = kappa * si_pd[i];
  return sd;
}

// rep_i(v) = dm_clean(v) + std(v) * z, z ~ N(0, 1), drawn repetition by
// repetition in raster order.
inline PerfusionSeries sample_repetitions(const Image2D& dm_clean, const Image2D& std_map, std::size_t count,
                                          Rng& rng) {
  if (count == 0) throw InvalidParameters("phantom: repetition count must be >= 1");
  require_same_shape(dm_clean, std_map, "phantom");
  PerfusionSeries series;
  series.reps.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    Image2D rep = dm_clean;
    for (std::size_t i = 0; i < rep.size(); ++i) {
      const double z = rng.normal();
      rep[i] += std_map[i] * z;
    }
    series.reps.push_back(std::move(rep));
  }
  return series;
}

// Normalized, truncated (3 sigma) Gaussian taps for a given sigma in voxels.
inline std::vector<double> gaussian_kernel(double sigma_vox) {
  if (sigma_vox <= 0.0) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_vox));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma_vox * sigma_vox));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

inline constexpr double kFwhmToSigma = 2.3548;

// Separable Gaussian blur, sigma = fwhm / (2.3548 * voxel size) per axis.
// Borders replicate the edge voxel.
inline Image2D gaussian_smooth(const Image2D& img, double fwhm_mm) {
  if (!(fwhm_mm >= 0.0) || !std::isfinite(fwhm_mm)) {
    throw InvalidParameters("phantom: fwhm must be >= 0, got " + std::to_string(fwhm_mm));
  }
  if (fwhm_mm == 0.0 || img.empty()) return img;
  const auto w = static_cast<std::ptrdiff_t>(img.width());
  const auto h = static_cast<std::ptrdiff_t>(img.height());
  const VoxelSize vs = img.voxel_size();
  const std::vector<double> kx = gaussian_kernel(fwhm_mm / (kFwhmToSigma * vs.x));
  const std::vector<double> ky = gaussian_kernel(fwhm_mm / (kFwhmToSigma * vs.y));
  const auto rx = static_cast<std::ptrdiff_t>(kx.size() / 2);
  const auto ry = static_cast<std::ptrdiff_t>(ky.size() / 2);
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

  Image2D tmp(img.width(), img.height(), vs);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -rx; i <= rx; ++i) {
        acc += kx[static_cast<std::size_t>(i + rx)] *
               img(static_cast<std::size_t>(clampi(x + i, w - 1)), static_cast<std::size_t>(y));
      }
      tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
    }
  }
  Image2D out(img.width(), img.height(), vs);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -ry; i <= ry; ++i) {
        acc += ky[static_cast<std::size_t>(i + ry)] *
               tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(clampi(y + i, h - 1)));
      }
      out(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
    }
  }
  return out;
}

// Axial level of slice i out of n, spread over [-0.5, 0.5].
inline double slice_position(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return -0.5 + static_cast<double>(i) / static_cast<double>(n - 1);
}

inline std::uint64_t subject_seed(std::uint64_t master_seed, std::size_t subject_index) {
  return derive_seed(master_seed, "phantom.subject", {subject_index});
}

// One complete synthetic subject. Pure function of (config, master seed, index).
inline PhantomSubject generate_subject(const PhantomConfig& cfg, std::uint64_t master_seed, std::size_t index) {
  if (cfg.slices == 0) throw InvalidParameters("phantom: slice count must be >= 1");
  PhantomSubject subject;
  subject.seed = subject_seed(master_seed, index);
  subject.index = index;
  subject.slices.reserve(cfg.slices);
  for (std::size_t s = 0; s < cfg.slices; ++s) {
    PhantomSlice sl;
    sl.tissue = generate_geometry(subject.seed, cfg.width, cfg.height, cfg.voxel, slice_position(s, cfg.slices));
    sl.cbf_truth = ground_truth_cbf(sl.tissue);
    sl.si_pd = synth_si_pd(sl.tissue, cfg.pd_scale);
    const CbfScaleMap scale = scale_map(cfg.acquisition, sl.si_pd, sl.tissue.mask);
    sl.dm_clean = invert_cbf(sl.cbf_truth, scale);
    sl.noise_std = noise_std_map(sl.si_pd, cfg.kappa);
    Rng rng = make_stream(subject.seed, "phantom.noise", {s});
    sl.repetitions = sample_repetitions(sl.dm_clean, sl.noise_std, cfg.repetitions, rng);
    if (cfg.smoothing) {
      for (Image2D& rep : sl.repetitions.reps) rep = gaussian_smooth(rep, cfg.fwhm_mm);
    }
    subject.slices.push_back(std::move(sl));
  }
  return subject;
}

inline std::vector<PhantomSubject> generate_subjects(const PhantomConfig& cfg, std::uint64_t master_seed) {
  std::vector<PhantomSubject> out;
  out.reserve(cfg.subjects);
  for (std::size_t i = 0; i < cfg.subjects; ++i) out.push_back(generate_subject(cfg, master_seed, i));
  return out;
}

}  // namespace asl
