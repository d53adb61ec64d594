#pragma once

// Central finite-difference gradient checking in double precision.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "asl/errors.hpp"

namespace asl {

// A function sample that also reports which smooth region the evaluation point
// lies in (for piecewise-smooth functions such as PReLU networks). A central
// difference straddling two regions does not estimate the derivative, so such
// coordinates are skipped and counted.
struct RegionSample {
  double value;
  std::uint64_t region;
};

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
// `coords` restricts the check to a subset of coordinates (all when empty).
template <typename F>
FiniteDiffResult finite_diff_check(F&& f, std::span<const double> params, std::span<const double> analytic, double h,
                                   std::span<const std::size_t> coords = {}) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidParameters("gradcheck: step h must be > 0");
  if (analytic.size() != params.size()) throw ShapeMismatch("gradcheck: gradient size differs from parameters");

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  std::vector<double> p(params.begin(), params.end());
  FiniteDiffResult r;
  for (std::size_t i : coords) {
    const double orig = p[i];
    p[i] = orig + h;
    const auto plus = f(std::span<const double>(p));
    p[i] = orig - h;
    const auto minus = f(std::span<const double>(p));
    p[i] = orig;

    double numeric;
    if constexpr (std::same_as<std::decay_t<decltype(plus)>, RegionSample>) {
      if (plus.region != minus.region) {
        ++r.skipped;
        continue;
      }
      numeric = (plus.value - minus.value) / (2.0 * h);
    } else {
      numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * h);
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    const double err = std::abs(analytic[i] - numeric) / denom;
    ++r.checked;
    if (r.checked == 1 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric;
    }
  }
  return r;
}

}  // namespace asl
