#pragma once

// Image and table exports: binary PGM for visual panels, CSV for everything a
// plotting tool would consume. CSV numbers use "%.10g"; infinities print as
// "inf", missing values as an empty field.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asl/container.hpp"
#include "asl/errors.hpp"
#include "asl/image.hpp"
#include "asl/metrics.hpp"
#include "asl/pipeline.hpp"

namespace asl {

struct Window {
  double lo = 0.0;
  double hi = 1.0;
};

// Gray level for v: floor(255 * (v - lo) / (hi - lo)) clamped to [0, 255], so
// lo -> 0, hi -> 255 and the window midpoint -> 127. NaN maps to 0.
inline unsigned char window_level(double v, Window w) {
  const double t = std::floor(255.0 * (v - w.lo) / (w.hi - w.lo));
  if (!(t > 0.0)) return 0;
  if (t >= 255.0) return 255;
  return static_cast<unsigned char>(t);
}

inline std::string encode_pgm(const Image2D& img, Window w) {
  if (!(std::isfinite(w.lo) && std::isfinite(w.hi) && w.lo < w.hi)) {
    throw InvalidParameters("export: PGM window needs finite lo < hi");
  }
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (double v : img.values()) out.push_back(static_cast<char>(window_level(v, w)));
  return out;
}

inline void export_pgm(const Image2D& img, const std::filesystem::path& path, Window w) {
  write_file(path, encode_pgm(img, w));
}

// Row-major 8-bit pixels of a P5 file written by encode_pgm.
inline std::vector<unsigned char> decode_pgm(const std::string& bytes, std::size_t& width, std::size_t& height) {
  unsigned w = 0, h = 0, maxval = 0;
  int consumed = 0;
  if (std::sscanf(bytes.c_str(), "P5 %u %u %u%n", &w, &h, &maxval, &consumed) != 3 || maxval != 255) {
    throw InvalidParameters("export: not an 8-bit binary PGM");
  }
  const std::size_t start = static_cast<std::size_t>(consumed) + 1;
  if (bytes.size() != start + static_cast<std::size_t>(w) * h) throw TruncatedPayload("export: PGM size mismatch");
  width = w;
  height = h;
  return {bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end()};
}

inline std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_number(std::optional<double> v) { return v ? csv_number(*v) : std::string(); }

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string s = "subject,fraction,method,lambda,psnr_db,cbf_rmse,cbf_ccc,n_voxels,psnr_truth_db,cbf_rmse_truth,cbf_ccc_truth\n";
  for (const auto& r : rows) {
    s += std::to_string(r.subject) + "," + csv_number(r.fraction) + "," + r.method + "," + csv_number(r.lambda) +
         "," + csv_number(r.psnr) + "," + csv_number(r.rmse) + "," + csv_number(r.ccc) + "," +
         std::to_string(r.n_voxels) + "," + csv_number(r.psnr_truth) + "," + csv_number(r.rmse_truth) + "," +
         csv_number(r.ccc_truth) + "\n";
  }
  return s;
}

inline std::string summary_csv(std::span<const SummaryRow> rows) {
  std::string s = "fraction,method,lambda,psnr_mean,psnr_std,rmse_mean,rmse_std,ccc_mean,ccc_std,subjects\n";
  for (const auto& r : rows) {
    s += csv_number(r.fraction) + "," + r.method + "," + csv_number(r.lambda) + "," + csv_number(r.psnr.mean) + "," +
         csv_number(r.psnr.std) + "," + csv_number(r.rmse.mean) + "," + csv_number(r.rmse.std) + "," +
         csv_number(r.ccc.mean) + "," + csv_number(r.ccc.std) + "," + std::to_string(r.subjects) + "\n";
  }
  return s;
}

// Wall-clock seconds are left out so that identical runs give identical bytes.
inline std::string loss_history_csv(std::span<const EpochStats> history) {
  std::string s = "epoch,train_loss,validation_loss\n";
  for (const auto& e : history) {
    s += std::to_string(e.epoch) + "," + csv_number(e.train_loss) + "," + csv_number(e.validation_loss) + "\n";
  }
  return s;
}

// One (mean, difference) pair per voxel, difference = reference - estimate
// (the bland_altman() convention).
inline std::string bland_altman_points_csv(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw ShapeMismatch("export: Bland-Altman inputs differ in length");
  std::string s = "mean,difference\n";
  for (std::size_t i = 0; i < reference.size(); ++i) {
    s += csv_number(0.5 * (reference[i] + estimate[i])) + "," + csv_number(reference[i] - estimate[i]) + "\n";
  }
  return s;
}

struct BlandAltmanEntry {
  std::string label;
  BlandAltmanSummary summary;
};

inline std::string bland_altman_summary_csv(std::span<const BlandAltmanEntry> entries) {
  std::string s = "label,n,mean_diff,sd_diff,loa_low,loa_high,slope,intercept\n";
  for (const auto& e : entries) {
    const auto& b = e.summary;
    s += e.label + "," + std::to_string(b.n) + "," + csv_number(b.mean_diff) + "," + csv_number(b.sd_diff) + "," +
         csv_number(b.loa_low) + "," + csv_number(b.loa_high) + "," + csv_number(b.slope) + "," +
         csv_number(b.intercept) + "\n";
  }
  return s;
}

}  // namespace asl
