#pragma once

// Single-compartment (Buxton) CBF quantification for single-delay pCASL:
//
//   CBF = 6000 * beta * dM * exp(PLD/T1b) / (2 * alpha * T1b * SI_PD * (1 - exp(-tau/T1b)))
//
// with times in seconds, giving mL/100g/min. Per voxel this is
// CBF(v) = scale(v) * dM(v) with scale(v) = K / SI_PD(v), where K depends on
// the acquisition constants only.

#include <cmath>
#include <string>

#include "asl/errors.hpp"
#include "asl/image.hpp"

namespace asl {

// Kinetic-model constants. Times are in milliseconds.
struct AcquisitionParams {
  double beta = 0.9;      // brain-blood partition coefficient, mL/g
  double t1b_ms = 1650.0; // arterial blood T1
  double alpha = 0.85;    // labeling efficiency
  double tau_ms = 1600.0; // label duration
  double pld_ms = 2200.0; // post-label delay

  // allow_zero_delay admits pld_ms == 0 (the zero-delay limit of the model).
  void validate(bool allow_zero_delay = false) const {
    auto positive = [](double v, const char* name) {
      if (!(std::isfinite(v) && v > 0.0)) {
        throw InvalidParameters(std::string("kinetics: ") + name + " must be finite and > 0, got " +
                                std::to_string(v));
      }
    };
    positive(beta, "beta");
    positive(t1b_ms, "t1b_ms");
    positive(alpha, "alpha");
    positive(tau_ms, "tau_ms");
    if (!(allow_zero_delay && pld_ms == 0.0)) positive(pld_ms, "pld_ms");
    if (alpha > 1.0) throw InvalidParameters("kinetics: alpha must be <= 1, got " + std::to_string(alpha));
  }

  friend bool operator==(const AcquisitionParams&, const AcquisitionParams&) = default;
};

// Voxel-independent factor K of the model (mL/100g/min per unit dM/SI_PD).
inline double kinetic_constant(const AcquisitionParams& p) {
  p.validate(/*allow_zero_delay=*/true);

  const double t1b = p.t1b_ms / 1000.0;
  const double tau = p.tau_ms / 1000.0;
  const double pld = p.pld_ms / 1000.0;
  const double k = 6000.0 * p.beta * std::exp(pld / t1b) / (2.0 * p.alpha * t1b * (1.0 - std::exp(-tau / t1b)));
  if (!std::isfinite(k) || k <= 0.0) {
    throw InvalidParameters("kinetics: kinetic constant is not finite (" + std::to_string(k) + ")");
  }
  return k;
}

// Per-voxel linear coefficient of the model. Unmasked voxels hold 0.
struct CbfScaleMap {
  Image2D scale;
};

inline CbfScaleMap scale_map(const AcquisitionParams& params, const Image2D& si_pd, const Image2D& mask) {
  require_same_shape(si_pd, mask, "kinetics");
  const double k = kinetic_constant(params);
  CbfScaleMap out{Image2D(si_pd.width(), si_pd.height(), si_pd.voxel_size())};
  for (std::size_t y = 0; y < si_pd.height(); ++y) {
    for (std::size_t x = 0; x < si_pd.width(); ++x) {
      if (mask(x, y) <= 0.5) continue;
      const double pd = si_pd(x, y);
      if (!(pd > 0.0) || !std::isfinite(pd)) throw DegenerateProtonDensity(x, y, pd);
      out.scale(x, y) = k / pd;
    }
  }
  return out;
}

inline Image2D quantify_cbf(const Image2D& dm, const CbfScaleMap& scale) {
  require_same_shape(dm, scale.scale, "kinetics");
  Image2D cbf(dm.width(), dm.height(), dm.voxel_size());
  for (std::size_t i = 0; i < dm.size(); ++i) cbf[i] = scale.scale[i] * dm[i];
  return cbf;
}

// Clean dM that quantifies to `cbf`. Voxels with sentinel scale must carry
// zero CBF.
inline Image2D invert_cbf(const Image2D& cbf, const CbfScaleMap& scale) {
  require_same_shape(cbf, scale.scale, "kinetics");
  Image2D dm(cbf.width(), cbf.height(), cbf.voxel_size());
  for (std::size_t i = 0; i < cbf.size(); ++i) {
    const double s = scale.scale[i];
    if (s > 0.0) {
      dm[i] = cbf[i] / s;
    } else if (cbf[i] != 0.0) {
      throw InvalidParameters("kinetics: cannot invert CBF " + std::to_string(cbf[i]) + " at voxel " +
                              std::to_string(i) + " with zero scale");
    }
  }
  return dm;
}

}  // namespace asl
