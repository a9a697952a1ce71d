#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rangeaug/dataio.hpp"

using namespace rangeaug;
using nd::Array;
using nd::Shape;

namespace {

bool throws_with(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
  } catch (const FormatError& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST(Synthetic, ShapesLabelsAndRange) {
  const Dataset ds = generate_synthetic(22, 4, 3, 16, "train");
  EXPECT_EQ(ds.images.shape(), (Shape{22, 3, 16, 16}));
  EXPECT_EQ(ds.image_shape(), (Shape{3, 16, 16}));
  ASSERT_EQ(ds.size(), 22u);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.labels[i], i % 4);
  for (double v : ds.images.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
  const Dataset a = generate_synthetic(8, 4, 11, 12);
  const Dataset b = generate_synthetic(8, 4, 11, 12);
  const Dataset c = generate_synthetic(8, 4, 12, 12);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, c.images);
}

TEST(Synthetic, ImagesAreNotFlat) {
  const Dataset ds = generate_synthetic(8, 4, 1, 16);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Array img = ds.image(i);
    double lo = 1.0;
    double hi = 0.0;
    for (double v : img.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_GT(hi - lo, 0.05) << i;
  }
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic(10, 5, 0), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(2, 4, 0), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(10, 4, 0, 4), std::invalid_argument);
}

TEST(Dataset, GatherCopiesRows) {
  const Dataset ds = generate_synthetic(6, 3, 2, 8);
  const Array g = ds.gather({4, 1});
  EXPECT_EQ(g.shape(), (Shape{2, 3, 8, 8}));
  const Array r4 = ds.image(4);
  for (std::size_t i = 0; i < r4.size(); ++i) EXPECT_EQ(g[i], r4[i]);
  EXPECT_THROW(ds.image(6), std::out_of_range);
}

TEST(Ppm, RoundTripQuantisesToBytes) {
  const Dataset ds = generate_synthetic(1, 1, 4, 9);
  const Array img = ds.image(0);
  const Array back = decode_ppm(encode_ppm(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255.0 + 1e-12);
  // Already-quantised values survive exactly.
  EXPECT_EQ(decode_ppm(encode_ppm(back)), back);
}

TEST(Ppm, HeaderWithCommentAndLayout) {
  std::string bytes = "P6\n# comment\n2 1\n255\n";
  bytes += std::string{'\xff', '\x00', '\x00', '\x00', '\x80', '\xff'};
  const Array img = decode_ppm(bytes);
  EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
  // channel-major: R plane, G plane, B plane
  EXPECT_EQ(img[0], 1.0);
  EXPECT_EQ(img[1], 0.0);
  EXPECT_EQ(img[3], 128.0 / 255.0);
  EXPECT_EQ(img[5], 1.0);
}

TEST(Ppm, RejectsMalformedInput) {
  EXPECT_TRUE(throws_with([] { decode_ppm("P3\n1 1\n255\n   "); }, "magic"));
  EXPECT_TRUE(throws_with([] { decode_ppm("P6\n1 1\n65535\n"); }, "maxval"));
  EXPECT_TRUE(throws_with([] { decode_ppm(std::string("P6\n2 2\n255\n") + "abc"); }, "truncated"));
  EXPECT_THROW(encode_ppm(Array(Shape{2, 2, 2})), nd::ShapeError);
}

TEST(Ppm, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rangeaug_io_test.ppm";
  const Array img = decode_ppm(encode_ppm(generate_synthetic(1, 1, 8, 8).image(0)));
  save_ppm(path.string(), img);
  EXPECT_EQ(load_ppm(path.string()), img);
  const Dataset ds = load_dataset(path.string());
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.labels[0], 0u);
  std::filesystem::remove(path);
}

TEST(Ratf, RoundTripIsBitExact) {
  const Dataset ds = generate_synthetic(10, 4, 5, 8, "val");
  const Dataset back = decode_tensorfile(encode_tensorfile(ds));
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 4u);
  const auto path = std::filesystem::temp_directory_path() / "rangeaug_io_test.ratf";
  save_tensorfile(path.string(), ds);
  const Dataset f = load_dataset(path.string());
  EXPECT_EQ(f.images, ds.images);
  std::filesystem::remove(path);
  EXPECT_THROW(load_dataset("data.csv"), std::invalid_argument);
}

TEST(Ratf, RejectsMalformedInput) {
  const std::string good = encode_tensorfile(generate_synthetic(4, 2, 1, 8));
  EXPECT_TRUE(throws_with([&] { decode_tensorfile("XXXX" + good.substr(4)); }, "bad magic"));
  EXPECT_TRUE(throws_with([&] { decode_tensorfile(good.substr(0, good.size() - 5)); }, "length mismatch"));
  EXPECT_TRUE(throws_with([&] { decode_tensorfile(good + "z"); }, "length mismatch"));
  std::string bad_version = good;
  bad_version[4] = 7;
  EXPECT_TRUE(throws_with([&] { decode_tensorfile(bad_version); }, "version"));
  // Last label bumped past the class count.
  std::string bad_label = good;
  bad_label[bad_label.size() - 8] = 9;
  EXPECT_TRUE(throws_with([&] { decode_tensorfile(bad_label); }, "out of range"));
}

TEST(Shift, IdentitySpecLeavesImagesUnchanged) {
  const Dataset ds = generate_synthetic(6, 3, 2, 8);
  const Dataset out = apply_shift(ds, ShiftSpec{}, 4);
  EXPECT_EQ(out.images, ds.images);
  EXPECT_EQ(out.labels, ds.labels);
}

TEST(Shift, BrightnessOnlyMatchesClampedScale) {
  const Dataset ds = generate_synthetic(5, 4, 3, 8);
  ShiftSpec spec;
  spec.brightness_factors = {0.5};
  const Dataset out = apply_shift(ds, spec, 1);
  for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_DOUBLE_EQ(out.images[i], 0.5 * ds.images[i]);
  EXPECT_EQ(apply_shift(ds, spec, 1).images, out.images);
}

TEST(Shift, ValidatesFactors) {
  const Dataset ds = generate_synthetic(4, 4, 3, 8);
  ShiftSpec spec;
  spec.noise_stds = {};
  EXPECT_THROW(apply_shift(ds, spec, 0), std::invalid_argument);
  spec = ShiftSpec{};
  spec.contrast_factors = {20.0};
  EXPECT_THROW(apply_shift(ds, spec, 0), std::invalid_argument);
}

TEST(Shift, WideBrightnessMovesMeanPixel) {
  const Dataset ds = generate_synthetic(200, 4, 5, 16);
  ShiftSpec spec;
  spec.brightness_factors = {0.4, 2.5};
  const Dataset out = apply_shift(ds, spec, 2);
  // Per-image mean pixel change; darker and brighter images would cancel in a
  // dataset-wide mean.
  const std::size_t len = ds.image_numel();
  double moved = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double before = 0.0;
    double after = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      before += ds.images[i * len + k];
      after += out.images[i * len + k];
    }
    moved += std::abs(after - before) / static_cast<double>(len);
  }
  EXPECT_GT(moved / static_cast<double>(ds.size()), 0.05);
  for (double v : out.images.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}
