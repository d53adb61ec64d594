#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "asl/kinetics.hpp"
#include "asl/phantom.hpp"

using namespace asl;

namespace {

const VoxelSize kVoxel{2.7, 2.7};

TissueMaps default_geometry(std::uint64_t seed, double slice_pos = 0.0) {
  return generate_geometry(seed, 128, 128, kVoxel, slice_pos);
}

PhantomConfig small_config() {
  PhantomConfig c;
  c.subjects = 2;
  c.slices = 2;
  c.width = 64;
  c.height = 64;
  c.repetitions = 5;
  return c;
}

}  // namespace

TEST(Geometry, Deterministic) {
  const TissueMaps a = default_geometry(17);
  const TissueMaps b = default_geometry(17);
  EXPECT_EQ(a.wm, b.wm);
  EXPECT_EQ(a.gm, b.gm);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(Geometry, SeedsGiveDistinctSubjects) {
  const TissueMaps a = default_geometry(1);
  const TissueMaps b = default_geometry(2);
  EXPECT_NE(a.gm, b.gm);
}

TEST(Geometry, PartialVolumeInvariants) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (double pos : {-0.5, 0.0, 0.5}) {
      const TissueMaps t = default_geometry(seed, pos);
      for (std::size_t i = 0; i < t.mask.size(); ++i) {
        ASSERT_GE(t.wm[i], 0.0);
        ASSERT_GE(t.gm[i], 0.0);
        ASSERT_LE(t.wm[i] + t.gm[i], 1.0 + 1e-12);
        ASSERT_TRUE(t.mask[i] == 0.0 || t.mask[i] == 1.0);
        if (!in_mask(t.mask, i)) {
          ASSERT_EQ(t.wm[i], 0.0);
          ASSERT_EQ(t.gm[i], 0.0);
        } else {
          ASSERT_GT(t.wm[i] + t.gm[i], 0.0);
        }
      }
    }
  }
}

TEST(Geometry, GreyMatterShareInBand) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const TissueMaps t = default_geometry(seed);
    std::size_t masked = 0, grey = 0;
    for (std::size_t i = 0; i < t.mask.size(); ++i) {
      if (!in_mask(t.mask, i)) continue;
      ++masked;
      if (t.gm[i] > 0.5) ++grey;
    }
    ASSERT_GT(masked, 1000u);
    const double share = static_cast<double>(grey) / static_cast<double>(masked);
    EXPECT_GT(share, 0.1);
    EXPECT_LT(share, 0.6);
  }
}

TEST(Geometry, HasPureTissueAndPartialVolumeVoxels) {
  const TissueMaps t = default_geometry(5);
  bool pure_wm = false, pure_gm = false, mixed = false;
  for (std::size_t i = 0; i < t.mask.size(); ++i) {
    pure_wm = pure_wm || t.wm[i] == 1.0;
    pure_gm = pure_gm || t.gm[i] == 1.0;
    mixed = mixed || (t.wm[i] > 0.2 && t.gm[i] > 0.2);
  }
  EXPECT_TRUE(pure_wm);
  EXPECT_TRUE(pure_gm);
  EXPECT_TRUE(mixed);
}

TEST(Geometry, RejectsSmallGrid) {
  EXPECT_THROW(generate_geometry(1, 63, 128, kVoxel), GeometryError);
  EXPECT_THROW(generate_geometry(1, 128, 32, kVoxel), GeometryError);
  EXPECT_THROW(generate_geometry(1, 128, 128, {0.0, 1.0}), GeometryError);
}

TEST(GroundTruthCbf, TissueValues) {
  TissueMaps t{Image2D(3, 1), Image2D(3, 1), Image2D(3, 1, {}, 1.0)};
  t.wm[0] = 1.0;
  t.gm[1] = 1.0;
  t.wm[2] = 0.5;
  t.gm[2] = 0.5;
  const Image2D cbf = ground_truth_cbf(t);
  EXPECT_EQ(cbf[0], 20.0);
  EXPECT_EQ(cbf[1], 65.0);
  EXPECT_EQ(cbf[2], 42.5);
}

TEST(GroundTruthCbf, ZeroOutsideMask) {
  const TissueMaps t = default_geometry(3);
  const Image2D cbf = ground_truth_cbf(t);
  for (std::size_t i = 0; i < cbf.size(); ++i) {
    if (!in_mask(t.mask, i)) {
      EXPECT_EQ(cbf[i], 0.0);
    }
  }
}

TEST(SynthSiPd, PureTissue) {
  TissueMaps t{Image2D(2, 1), Image2D(2, 1), Image2D(2, 1, {}, 1.0)};
  t.wm[0] = 1.0;
  t.gm[1] = 1.0;
  const Image2D pd = synth_si_pd(t, 100.0);
  EXPECT_DOUBLE_EQ(pd[0], 70.0);
  EXPECT_DOUBLE_EQ(pd[1], 85.0);
}

TEST(SynthSiPd, LinearInScale) {
  const TissueMaps t = default_geometry(8);
  const Image2D a = synth_si_pd(t, 100.0);
  const Image2D b = synth_si_pd(t, 200.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(b[i], 2.0 * a[i]);
    if (in_mask(t.mask, i)) {
      EXPECT_GT(a[i], 0.0);
    } else {
      EXPECT_EQ(a[i], 0.0);
    }
  }
}

TEST(SynthSiPd, MaskWithoutTissueIsGeometryError) {
  TissueMaps t{Image2D(2, 1), Image2D(2, 1), Image2D(2, 1, {}, 1.0)};
  t.wm[0] = 1.0;
  EXPECT_THROW(synth_si_pd(t, 100.0), GeometryError);
  EXPECT_THROW(synth_si_pd(default_geometry(1), 0.0), InvalidParameters);
}

TEST(NoiseStd, ProportionalToProtonDensity) {
  const Image2D sd = noise_std_map(Image2D(2, 2, {}, 100.0), 0.005);
  for (double v : sd.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_THROW(noise_std_map(Image2D(2, 2, {}, 100.0), 0.0), InvalidParameters);
}

TEST(NoiseStd, GreyMatterSnrNearOne) {
  TissueMaps t{Image2D(1, 1), Image2D(1, 1, {}, 1.0), Image2D(1, 1, {}, 1.0)};
  const Image2D pd(1, 1, {}, 100.0);
  const Image2D dm = invert_cbf(ground_truth_cbf(t), scale_map({}, pd, t.mask));
  const Image2D sd = noise_std_map(pd, 0.005);
  EXPECT_NEAR(dm[0] / sd[0], 1.105, 0.001);
}

TEST(SampleRepetitions, ZeroNoiseCopiesClean) {
  Rng rng(1);
  const Image2D dm(8, 8, {}, 0.3);
  const PerfusionSeries s = sample_repetitions(dm, Image2D(8, 8), 4, rng);
  ASSERT_EQ(s.count(), 4u);
  for (const auto& r : s.reps) EXPECT_EQ(r, dm);
}

TEST(SampleRepetitions, SampleMeanWithinStandardErrorBound) {
  Rng rng(2);
  Image2D dm(64, 64), sd(64, 64);
  for (std::size_t i = 0; i < dm.size(); ++i) {
    dm[i] = 0.5 * std::sin(0.1 * static_cast<double>(i));
    sd[i] = 0.2 + 0.5 * static_cast<double>(i % 7) / 7.0;
  }
  const PerfusionSeries s = sample_repetitions(dm, sd, 100, rng);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < dm.size(); ++i) {
    double m = 0.0;
    for (const auto& r : s.reps) m += r[i];
    m /= 100.0;
    if (std::abs(m - dm[i]) <= 4.0 * sd[i] / 10.0) ++ok;
  }
  EXPECT_GE(static_cast<double>(ok), 0.99 * static_cast<double>(dm.size()));
}

TEST(SampleRepetitions, NoiseIsWhiteAcrossRepetitions) {
  int passes = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const Image2D dm(48, 48, {}, 0.5);
    const Image2D sd(48, 48, {}, 0.5);
    const PerfusionSeries s = sample_repetitions(dm, sd, 2, rng);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < dm.size(); ++i) {
      const double a = s.reps[0][i] - dm[i], b = s.reps[1][i] - dm[i];
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
    if (std::abs(sab / std::sqrt(saa * sbb)) < 0.1) ++passes;
  }
  EXPECT_GE(passes, 2);
}

TEST(SampleRepetitions, Errors) {
  Rng rng(1);
  EXPECT_THROW(sample_repetitions(Image2D(4, 4), Image2D(4, 4), 0, rng), InvalidParameters);
  EXPECT_THROW(sample_repetitions(Image2D(4, 4), Image2D(4, 5), 1, rng), ShapeMismatch);
}

TEST(GaussianSmooth, SigmaInVoxels) {
  EXPECT_NEAR(4.0 / (kFwhmToSigma * 2.7), 0.6291326148638872, 1e-12);
  const auto k = gaussian_kernel(0.6291326148638872);
  EXPECT_EQ(k.size(), 5u);  // radius ceil(3 sigma) = 2
  EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-15);
}

TEST(GaussianSmooth, ConstantImageUnchanged) {
  const Image2D img(20, 20, kVoxel, 3.25);
  const Image2D out = gaussian_smooth(img, 4.0);
  for (double v : out.values()) EXPECT_NEAR(v, 3.25, 1e-14);
}

TEST(GaussianSmooth, ImpulseGivesKernel) {
  Image2D img(21, 21, kVoxel);
  img(10, 10) = 1.0;
  const Image2D out = gaussian_smooth(img, 4.0);
  const auto k = gaussian_kernel(4.0 / (kFwhmToSigma * 2.7));
  const std::size_t r = k.size() / 2;
  double total = 0.0;
  for (std::size_t y = 0; y < 21; ++y) {
    for (std::size_t x = 0; x < 21; ++x) {
      total += out(x, y);
      const bool inside = x + r >= 10 && x <= 10 + r && y + r >= 10 && y <= 10 + r;
      const double want = inside ? k[x + r - 10] * k[y + r - 10] : 0.0;
      EXPECT_NEAR(out(x, y), want, 1e-15);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(GaussianSmooth, ZeroFwhmIsIdentity) {
  Rng rng(3);
  Image2D img(9, 9, kVoxel);
  for (auto& v : img.data()) v = rng.normal();
  EXPECT_EQ(gaussian_smooth(img, 0.0), img);
  EXPECT_THROW(gaussian_smooth(img, -1.0), InvalidParameters);
}

TEST(GaussianSmooth, ReducesNoiseVariance) {
  Rng rng(4);
  Image2D img(64, 64, kVoxel);
  for (auto& v : img.data()) v = rng.normal();
  const Image2D out = gaussian_smooth(img, 4.0);
  double ss = 0.0;
  for (double v : out.values()) ss += v * v;
  const auto k = gaussian_kernel(4.0 / (kFwhmToSigma * 2.7));
  double k2 = 0.0;
  for (double a : k) k2 += a * a;
  EXPECT_NEAR(ss / static_cast<double>(out.size()), k2 * k2, 0.1 * k2 * k2);
}

TEST(Subject, QuantifyingCleanSignalReproducesTruth) {
  const PhantomSubject s = generate_subject(small_config(), 9, 0);
  for (const auto& sl : s.slices) {
    const Image2D cbf = quantify_cbf(sl.dm_clean, scale_map({}, sl.si_pd, sl.tissue.mask));
    for (std::size_t i = 0; i < cbf.size(); ++i) {
      if (!in_mask(sl.tissue.mask, i)) continue;
      EXPECT_LT(std::abs(cbf[i] - sl.cbf_truth[i]) / sl.cbf_truth[i], 1e-10);
    }
  }
}

TEST(Subject, DeterministicAndDistinct) {
  const auto a = generate_subjects(small_config(), 11);
  const auto b = generate_subjects(small_config(), 11);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].seed, b[i].seed);
    for (std::size_t k = 0; k < a[i].slices.size(); ++k) {
      EXPECT_EQ(a[i].slices[k].repetitions.reps, b[i].slices[k].repetitions.reps);
      EXPECT_EQ(a[i].slices[k].tissue.gm, b[i].slices[k].tissue.gm);
    }
  }
  EXPECT_NE(a[0].seed, a[1].seed);
  EXPECT_NE(a[0].slices[0].tissue.gm, a[1].slices[0].tissue.gm);
  EXPECT_NE(a[0].slices[0].tissue.gm, a[0].slices[1].tissue.gm);
}

TEST(Subject, SubjectIsIndependentOfCohortSize) {
  PhantomConfig c = small_config();
  const PhantomSubject alone = generate_subject(c, 5, 1);
  const auto all = generate_subjects(c, 5);
  EXPECT_EQ(alone.slices[1].repetitions.reps, all[1].slices[1].repetitions.reps);
}

TEST(Subject, SmoothingFlag) {
  PhantomConfig c = small_config();
  c.smoothing = false;
  const PhantomSubject raw = generate_subject(c, 3, 0);
  c.smoothing = true;
  const PhantomSubject smooth = generate_subject(c, 3, 0);
  const auto& sl = raw.slices[0];
  EXPECT_EQ(gaussian_smooth(sl.repetitions.reps[2], c.fwhm_mm), smooth.slices[0].repetitions.reps[2]);
  EXPECT_EQ(sl.dm_clean, smooth.slices[0].dm_clean);
}

TEST(Subject, DefaultRepetitionCount) {
  EXPECT_EQ(PhantomConfig{}.repetitions, 100u);
  EXPECT_EQ(PhantomConfig{}.acquisition.tau_ms, 1600.0);
  EXPECT_EQ(PhantomConfig{}.acquisition.pld_ms, 2200.0);
}
