#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "asl/checkpoint.hpp"
#include "asl/config.hpp"
#include "asl/container.hpp"
#include "asl/export.hpp"
#include "asl/manifest.hpp"

using namespace asl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("asl_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Container, RoundTripsShapes) {
  Rng rng(1);
  for (std::vector<std::uint32_t> dims : {std::vector<std::uint32_t>{1, 1}, {2, 48, 40, 40}, {7}, {3, 5, 2}}) {
    for (DType dt : {DType::f32, DType::f64}) {
      TensorContainer t{dt, dims, {}};
      t.values.resize(t.element_count());
      for (double& v : t.values) v = dt == DType::f32 ? static_cast<double>(static_cast<float>(rng.normal())) : rng.normal();
      const auto back = decode_tensor(encode_tensor(t));
      EXPECT_EQ(back, t);
      EXPECT_EQ(encode_tensor(back), encode_tensor(t));
    }
  }
}

TEST(Container, SpecialValuesBitIdentical) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TensorContainer t{DType::f64, {5}, {-0.0, nan, std::numeric_limits<double>::infinity(), 1e-310, 0.1}};
  const std::string bytes = encode_tensor(t);
  const auto back = decode_tensor(bytes);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.values[i]), std::bit_cast<std::uint64_t>(t.values[i]));
  }
}

TEST(Container, HeaderLayout) {
  const std::string b = encode_tensor({DType::f32, {2, 3}, {1, 2, 3, 4, 5, 6}});
  ASSERT_EQ(b.size(), 7u + 8u + 24u);
  EXPECT_EQ(b.substr(0, 4), "ASLT");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 1);
  EXPECT_EQ(b[6], 2);
  EXPECT_EQ(b[7], 2);
  EXPECT_EQ(b[11], 3);
  // 1.0f little-endian
  EXPECT_EQ(static_cast<unsigned char>(b[15 + 3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(b[15 + 2]), 0x80);
}

TEST(Container, DistinctErrors) {
  const std::string good = encode_tensor({DType::f64, {2, 2}, {1, 2, 3, 4}});
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_tensor(bad), BadMagic);
  EXPECT_THROW(decode_tensor("AS"), BadMagic);
  bad = good;
  bad[4] = 9;
  EXPECT_THROW(decode_tensor(bad), UnsupportedVersion);
  bad = good;
  bad[5] = 3;
  EXPECT_THROW(decode_tensor(bad), UnsupportedDtype);
  EXPECT_THROW(decode_tensor(good.substr(0, good.size() - 1)), TruncatedPayload);
  EXPECT_THROW(decode_tensor(good.substr(0, 10)), TruncatedPayload);
  EXPECT_THROW(decode_tensor(good + "x"), ContainerError);
  EXPECT_THROW(encode_tensor({DType::f64, {2, 2}, {1, 2, 3}}), ContainerError);
}

TEST(Container, ImagesStacksAndTensors) {
  Image2D img(3, 2, {}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto t = to_container(img);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{2, 3}));
  EXPECT_EQ(image_from_container(decode_tensor(encode_tensor(t))), img);
  EXPECT_THROW(image_from_container({DType::f64, {6}, {1, 2, 3, 4, 5, 6}}), ShapeMismatch);

  std::vector<Image2D> stack{img, Image2D(3, 2, {}, 7.0)};
  EXPECT_EQ(stack_from_container(decode_tensor(encode_tensor(stack_to_container(stack)))), stack);

  Tensor4<float> x({2, 3, 4, 5});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(i) * 0.37f;
  EXPECT_EQ(tensor_from_container<float>(decode_tensor(encode_tensor(to_container(x)))), x);
}

TEST(Container, FilesAndChecksum) {
  const auto dir = fresh_dir("files");
  const TensorContainer t{DType::f64, {2}, {1.5, -2.5}};
  save_tensor(dir / "a" / "b.aslt", t);
  EXPECT_EQ(load_tensor(dir / "a" / "b.aslt"), t);
  EXPECT_EQ(checksum_hex(""), "cbf29ce484222325");
  EXPECT_EQ(checksum_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(file_checksum(dir / "a" / "b.aslt"), checksum_hex(encode_tensor(t)));
}

TEST(Pgm, WindowLevels) {
  const Window w{0.0, 10.0};
  EXPECT_EQ(window_level(0.0, w), 0);
  EXPECT_EQ(window_level(10.0, w), 255);
  EXPECT_EQ(window_level(5.0, w), 127);
  EXPECT_EQ(window_level(-3.0, w), 0);
  EXPECT_EQ(window_level(42.0, w), 255);
  EXPECT_EQ(window_level(std::numeric_limits<double>::quiet_NaN(), w), 0);
}

TEST(Pgm, EncodeDecode) {
  Image2D img(3, 2, {}, std::vector<double>{0, 5, 10, -1, 11, 2.5});
  const std::string bytes = encode_pgm(img, {0.0, 10.0});
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  std::size_t w = 0, h = 0;
  const auto px = decode_pgm(bytes, w, h);
  EXPECT_EQ(w, 3u);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(px, (std::vector<unsigned char>{0, 127, 255, 0, 255, 63}));
  EXPECT_THROW(encode_pgm(img, {1.0, 1.0}), InvalidParameters);
  EXPECT_THROW(encode_pgm(img, {2.0, 1.0}), InvalidParameters);
  EXPECT_THROW(encode_pgm(img, {0.0, std::numeric_limits<double>::infinity()}), InvalidParameters);
}

TEST(Config, DefaultsRoundTrip) {
  RunConfig c;
  c.seed = 9;
  c.train.seed = 9;  // loading mirrors the master seed into the training config
  c.train.epochs = 3;
  c.train.prelu = PreluMode::shared;
  c.loss.lambda = 0.7;
  c.phantom.smoothing = true;
  c.folds = {0, 2};
  c.subsets.fractions = {0.25, 0.5};
  const RunConfig back = config_from_json(parse_json_text(dump_json(to_json(c)), "test"));
  EXPECT_EQ(back, c);
  EXPECT_EQ(dump_json(to_json(back)), dump_json(to_json(c)));
}

TEST(Config, PartialOverridesKeepDefaults) {
  const RunConfig c = config_from_json(parse_json_text(R"({"seed": 4, "train": {"epochs": 2}})", "test"));
  RunConfig want;
  want.seed = 4;
  want.train.seed = 4;
  want.train.epochs = 2;
  EXPECT_EQ(c, want);
  EXPECT_EQ(c.experiment().train.seed, 4u);
}

TEST(Config, RejectsUnknownAndMistypedKeys) {
  EXPECT_THROW(config_from_json(parse_json_text(R"({"sed": 4})", "t")), ConfigError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"train": {"epoch": 4}})", "t")), ConfigError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"train": {"epochs": "four"}})", "t")), ConfigError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"train": {"prelu": "both"}})", "t")), ConfigError);
  EXPECT_THROW(parse_json_text("{nope", "t"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Config, ValidateRejectsBadValues) {
  RunConfig c;
  c.phantom.kappa = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.folds = {4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.loss.lambda = 1.5;
  EXPECT_THROW(c.validate(), InvalidParameters);
}

class ManifestTest : public ::testing::Test {
 protected:
  static Dataset small_dataset() {
    PhantomConfig p;
    p.subjects = 2;
    p.slices = 2;
    p.width = 64;
    p.height = 64;
    p.voxel = {8.0, 8.0};
    p.repetitions = 3;
    Dataset ds;
    ds.acquisition = p.acquisition;
    ds.voxel = p.voxel;
    ds.seed = 3;
    ds.subjects = generate_subjects(p, 3);
    return ds;
  }
};

TEST_F(ManifestTest, DatasetRoundTrip) {
  const auto dir = fresh_dir("dataset");
  const Dataset ds = small_dataset();
  save_dataset(dir, ds);
  EXPECT_TRUE(fs::exists(dir / "dataset.json"));
  EXPECT_TRUE(fs::exists(dir / "subject_001" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "subject_001" / "slice_01" / "repetitions.aslt"));
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.voxel, ds.voxel);
  EXPECT_EQ(back.acquisition, ds.acquisition);
  ASSERT_EQ(back.subjects.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(back.subjects[s].index, ds.subjects[s].index);
    ASSERT_EQ(back.subjects[s].slices.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& a = back.subjects[s].slices[k];
      const auto& b = ds.subjects[s].slices[k];
      for (const char* role : kImageRoles) EXPECT_EQ(detail::slice_role(a, role), detail::slice_role(b, role)) << role;
      EXPECT_EQ(a.repetitions.reps, b.repetitions.reps);
    }
  }
}

TEST_F(ManifestTest, ChecksumMismatchAndMissingFile) {
  const auto dir = fresh_dir("corrupt");
  save_dataset(dir, small_dataset());
  const auto img = dir / "subject_000" / "slice_00" / "gm.aslt";
  std::string bytes = read_file(img);
  bytes[bytes.size() - 1] ^= 0x01;
  write_file(img, bytes);
  EXPECT_THROW(load_dataset(dir), ManifestError);

  const auto dir2 = fresh_dir("missing");
  save_dataset(dir2, small_dataset());
  fs::remove(dir2 / "subject_001" / "slice_01" / "repetitions.aslt");
  EXPECT_THROW(load_dataset(dir2), ManifestError);

  const auto dir3 = fresh_dir("manifest_edit");
  save_dataset(dir3, small_dataset());
  write_file(dir3 / "subject_000" / "manifest.json", read_file(dir3 / "subject_000" / "manifest.json") + " ");
  EXPECT_THROW(load_dataset(dir3), ManifestError);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(11);
  for (PreluMode mode : {PreluMode::per_channel, PreluMode::shared}) {
    Checkpoint ck;
    ck.weights = init_denoiser<float>(rng, mode, 6, 1.0);
    ck.lambda = 0.35;
    ck.intensity_scale = 0.0123;
    ck.acquisition.pld_ms = 1800.0;
    const auto dir = fresh_dir(mode == PreluMode::shared ? "ck_shared" : "ck_channel");
    save_checkpoint(dir, ck);
    EXPECT_TRUE(fs::exists(dir / "checkpoint.json"));
    EXPECT_EQ(load_checkpoint(dir), ck);
  }
}

TEST(Checkpoint, RejectsTamperedWeights) {
  Rng rng(12);
  Checkpoint ck;
  ck.weights = init_denoiser<float>(rng, PreluMode::per_channel, 4, 1.0);
  const auto dir = fresh_dir("ck_bad");
  save_checkpoint(dir, ck);
  fs::remove(dir / "layer_03_bias.aslt");
  EXPECT_THROW(load_checkpoint(dir), Error);
}

TEST(Csv, Formatting) {
  EXPECT_EQ(csv_number(0.2), "0.2");
  EXPECT_EQ(csv_number(1.0 / 3.0), "0.3333333333");
  EXPECT_EQ(csv_number(kInfinitePsnr), "inf");
  EXPECT_EQ(csv_number(std::optional<double>{}), "");
  MetricsRow r;
  r.subject = 2;
  r.fraction = 0.4;
  r.method = kMethodProposed;
  r.lambda = 0.2;
  r.psnr = 30.5;
  r.rmse = 1.25;
  r.ccc = 0.9;
  r.n_voxels = 100;
  const std::vector<MetricsRow> rows{r};
  const std::string csv = metrics_csv(rows);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1), "2,0.4,proposed,0.2,30.5,1.25,0.9,100,0,0,0\n");
  const std::vector<double> ref{1.0, 3.0}, est{0.0, 4.0};
  EXPECT_EQ(bland_altman_points_csv(ref, est), "mean,difference\n0.5,1\n3.5,-1\n");
  const std::vector<EpochStats> hist{{0, 0.5, 0.25, 12.0}};
  EXPECT_EQ(loss_history_csv(hist), "epoch,train_loss,validation_loss\n0,0.5,0.25\n");
}
