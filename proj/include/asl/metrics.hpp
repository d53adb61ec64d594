#pragma once

// Image-quality and CBF-agreement metrics over masked voxels.
//
// Conventions:
//   PSNR  peak = max |reference| over the mask; MSE == 0 gives +infinity.
//   CCC   Lin's concordance with population (1/n) moments.
//   Bland-Altman  diff = reference - estimate, LoA = mean ± 1.96·sd with the
//         sample (n - 1) sd, least-squares line of diff on mean.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asl/errors.hpp"
#include "asl/image.hpp"

namespace asl {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

namespace detail {
inline void require_pairs(std::span<const double> a, std::span<const double> b, std::size_t min_n, const char* what) {
  if (a.size() != b.size()) throw ShapeMismatch(std::string("metrics: ") + what + " inputs differ in length");
  if (a.size() < min_n) {
    if (min_n <= 1) throw EmptyMask(std::string("metrics: ") + what + " over an empty mask");
    throw InvalidParameters(std::string("metrics: ") + what + " needs at least " + std::to_string(min_n) +
                            " values, got " + std::to_string(a.size()));
  }
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace detail

inline double mse(std::span<const double> reference, std::span<const double> estimate) {
  detail::require_pairs(reference, estimate, 1, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference[i] - estimate[i];
    acc += d * d;
  }
  return acc / static_cast<double>(reference.size());
}

inline double psnr(std::span<const double> reference, std::span<const double> estimate) {
  const double err = mse(reference, estimate);
  double peak = 0.0;
  for (double r : reference) peak = std::max(peak, std::abs(r));
  if (err == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / err);
}

inline double rmse(std::span<const double> reference, std::span<const double> estimate) {
  return std::sqrt(mse(reference, estimate));
}

// Lin's concordance correlation coefficient. When the denominator vanishes
// (both inputs constant with equal means) it returns 1 if x == y, else 0.
inline double ccc(std::span<const double> x, std::span<const double> y) {
  detail::require_pairs(x, y, 2, "ccc");
  const double mx = detail::mean(x), my = detail::mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double n = static_cast<double>(x.size());
  sxx /= n;
  syy /= n;
  sxy /= n;
  const double denom = sxx + syy + (mx - my) * (mx - my);
  if (denom == 0.0) return std::equal(x.begin(), x.end(), y.begin()) ? 1.0 : 0.0;
  return std::clamp(2.0 * sxy / denom, -1.0, 1.0);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  detail::require_pairs(x, y, 2, "pearson");
  const double mx = detail::mean(x), my = detail::mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct BlandAltmanSummary {
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  bool degenerate_regression = false;  // all means equal; slope forced to 0
  std::size_t n = 0;
};

inline constexpr double kLoaZ = 1.96;

inline BlandAltmanSummary bland_altman(std::span<const double> reference, std::span<const double> estimate) {
  detail::require_pairs(reference, estimate, 2, "bland_altman");
  const std::size_t n = reference.size();
  std::vector<double> d(n), m(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = reference[i] - estimate[i];
    m[i] = 0.5 * (reference[i] + estimate[i]);
  }
  BlandAltmanSummary s;
  s.n = n;
  s.mean_diff = detail::mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - s.mean_diff) * (v - s.mean_diff);
  s.sd_diff = std::sqrt(ss / static_cast<double>(n - 1));
  s.loa_low = s.mean_diff - kLoaZ * s.sd_diff;
  s.loa_high = s.mean_diff + kLoaZ * s.sd_diff;

  const double mm = detail::mean(m);
  double smm = 0.0, smd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    smm += (m[i] - mm) * (m[i] - mm);
    smd += (m[i] - mm) * (d[i] - s.mean_diff);
  }
  if (smm == 0.0) {
    s.degenerate_regression = true;
    s.slope = 0.0;
    s.intercept = s.mean_diff;
  } else {
    s.slope = smd / smm;
    s.intercept = s.mean_diff - s.slope * mm;
  }
  return s;
}

// Image wrappers: values are gathered at masked voxels.
inline double psnr(const Image2D& reference, const Image2D& estimate, const Image2D& mask) {
  return psnr(masked_values(reference, mask), masked_values(estimate, mask));
}
inline double rmse(const Image2D& reference, const Image2D& estimate, const Image2D& mask) {
  return rmse(masked_values(reference, mask), masked_values(estimate, mask));
}
inline double ccc(const Image2D& x, const Image2D& y, const Image2D& mask) {
  return ccc(masked_values(x, mask), masked_values(y, mask));
}
inline BlandAltmanSummary bland_altman(const Image2D& reference, const Image2D& estimate, const Image2D& mask) {
  return bland_altman(masked_values(reference, mask), masked_values(estimate, mask));
}

struct MetricsRow {
  std::size_t subject = 0;
  double fraction = 0.0;
  std::string method;            // "averaging" or "proposed"
  std::optional<double> lambda;  // proposed only
  double psnr = 0.0;             // dB, ΔM vs complete average
  double rmse = 0.0;             // CBF vs CBF of complete average
  double ccc = 0.0;
  std::size_t n_voxels = 0;
  // Same metrics against the synthetic ground truth.
  double psnr_truth = 0.0;
  double rmse_truth = 0.0;
  double ccc_truth = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample sd, 0 for a single value
};

inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) return {};
  MeanStd r;
  r.mean = detail::mean(v);
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct SummaryRow {
  double fraction = 0.0;
  std::string method;
  std::optional<double> lambda;
  MeanStd psnr, rmse, ccc;
  std::size_t subjects = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::vector<SummaryRow> summary;
  std::string psnr_peak = "max_abs_reference_in_mask";
};

// mean(std) over subjects for every (fraction, method) present in rows, in
// first-appearance order.
inline std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows) {
  std::vector<SummaryRow> out;
  for (const MetricsRow& r : rows) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const SummaryRow& s) {
      return s.fraction == r.fraction && s.method == r.method && s.lambda == r.lambda;
    });
    if (seen) continue;
    std::vector<double> p, e, c;
    for (const MetricsRow& q : rows) {
      if (q.fraction == r.fraction && q.method == r.method && q.lambda == r.lambda) {
        p.push_back(q.psnr);
        e.push_back(q.rmse);
        c.push_back(q.ccc);
      }
    }
    out.push_back({r.fraction, r.method, r.lambda, mean_std(p), mean_std(e), mean_std(c), p.size()});
  }
  return out;
}

}  // namespace asl
