#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "tmpdir.hpp"
#include "voldepth/io.hpp"

using namespace voldepth;

namespace {

DepthMap random_depth(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 40.0);
  DepthMap d(h, w);
  for (std::size_t i = 0; i < d.z.size(); ++i) {
    d.z[i] = u(rng);
    d.valid[i] = i % 7 != 3;
  }
  return d;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

}  // namespace

TEST(Pfm, RoundTripAtFloatPrecision) {
  TempDir dir;
  const auto d = random_depth(5, 9, 1);
  write_pfm(dir.file("d.pfm"), d);
  const auto r = read_pfm(dir.file("d.pfm"));
  ASSERT_EQ(r.width(), 9);
  ASSERT_EQ(r.height(), 5);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 9; ++x) {
      ASSERT_EQ(r.valid(y, x), d.valid(y, x));
      if (d.valid(y, x)) {
        EXPECT_EQ(r.z(y, x), static_cast<double>(static_cast<float>(d.z(y, x))));
      }
    }
  }
}

TEST(Pfm, RejectsTruncatedAndColour) {
  TempDir dir;
  write_text(dir.file("a.pfm"), "Pf\n4 4\n-1.0\n\x01\x02");
  EXPECT_THROW((void)read_pfm(dir.file("a.pfm")), FormatError);
  write_text(dir.file("b.pfm"), "PF\n1 1\n-1.0\n000000000000");
  EXPECT_THROW((void)read_pfm(dir.file("b.pfm")), FormatError);
  EXPECT_THROW((void)read_pfm(dir.file("missing.pfm")), FormatError);
}

TEST(PngDepth, RoundTripAtScaleResolution) {
  TempDir dir;
  const auto d = random_depth(6, 4, 2);
  write_png_depth(dir.file("d.png"), d, 1000.0);
  const auto r = read_png_depth(dir.file("d.png"), 1000.0);
  for (std::size_t i = 0; i < d.z.size(); ++i) {
    ASSERT_EQ(r.valid[i], d.valid[i]);
    if (d.valid[i]) {
      EXPECT_NEAR(r.z[i], d.z[i], 0.5e-3 + 1e-12);
    }
  }
  // An 8-bit colour PNG is not a depth map.
  Image img(3, 2, 2, 0.5);
  write_png_rgb(dir.file("c.png"), img);
  EXPECT_THROW((void)read_png_depth(dir.file("c.png"), 1000.0), FormatError);
}

TEST(PngRgb, RoundTripQuantized) {
  TempDir dir;
  Image img(3, 3, 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : img.values()) v = u(rng);
  write_png_rgb(dir.file("i.png"), img);
  const auto r = read_png_rgb(dir.file("i.png"));
  ASSERT_TRUE(r.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(r[i], img[i], 0.5 / 255 + 1e-12);
  write_text(dir.file("bad.png"), "not a png at all");
  EXPECT_THROW((void)read_png_rgb(dir.file("bad.png")), FormatError);
}

TEST(Sidecar, RoundTripExact) {
  TempDir dir;
  Sidecar s;
  s.intrinsics = {51.2, 49.9, 31.5, 23.25, 64, 48};
  const RigidTransform t =
      se3_exp(Twist::from_vector((Vec6() << 0.1, -0.2, 0.3, 0.01, 0.02, -0.03).finished()));
  s.T_ts = t;
  s.brightness = BrightnessParams{1.1, -0.02};
  write_sidecar(dir.file("p.txt"), s);
  const auto r = read_sidecar(dir.file("p.txt"));
  EXPECT_EQ(r.intrinsics.fx, 51.2);
  EXPECT_EQ(r.intrinsics.cy, 23.25);
  EXPECT_EQ(r.intrinsics.width, 64);
  ASSERT_TRUE(r.T_ts);
  EXPECT_EQ(r.T_ts->rotation, t.rotation);
  EXPECT_EQ(r.T_ts->translation, t.translation);
  EXPECT_EQ(*r.brightness, *s.brightness);

  Sidecar bare;
  bare.intrinsics = s.intrinsics;
  write_sidecar(dir.file("q.txt"), bare);
  const auto q = read_sidecar(dir.file("q.txt"));
  EXPECT_FALSE(q.T_ts);
  EXPECT_FALSE(q.brightness);
}

TEST(Sidecar, ErrorsNameOffset) {
  TempDir dir;
  write_text(dir.file("p.txt"), "size 4 4\nintrinsics 4 4 1.5 1.5\nfocus 3\n");
  try {
    (void)read_sidecar(dir.file("p.txt"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("offset 32"), std::string::npos) << msg;
    EXPECT_NE(msg.find("focus"), std::string::npos) << msg;
  }
  write_text(dir.file("r.txt"), "size 4 4\nintrinsics 4 4 1.5 1.5\nrotation 1 0 0 0 1 0 0 0 1\n");
  EXPECT_THROW((void)read_sidecar(dir.file("r.txt")), FormatError);
  write_text(dir.file("s.txt"), "size 4 4\n");
  EXPECT_THROW((void)read_sidecar(dir.file("s.txt")), FormatError);
}

TEST(Density, RoundTripBitExact) {
  TempDir dir;
  std::mt19937_64 rng(4);
  DensityVolume v{Volume(5, 3, 4), sample_planes(5, 0.5, 7.0, PlaneSampling::stratified, rng)};
  std::normal_distribution<double> n(0.0, 3.0);
  for (auto& x : v.raw.values()) x = n(rng);
  write_density(dir.file("v.dvol"), v);
  const auto r = read_density(dir.file("v.dvol"));
  EXPECT_EQ(r.raw, v.raw);
  EXPECT_EQ(r.planes.depths, v.planes.depths);
  EXPECT_EQ(r.planes.deltas, v.planes.deltas);
  EXPECT_EQ(r.planes.z_min, 0.5);
  EXPECT_EQ(r.planes.z_max, 7.0);
}

TEST(Density, RejectsMalformed) {
  TempDir dir;
  write_text(dir.file("a.dvol"), "DVOL 2\n1 1 1\n");
  EXPECT_THROW((void)read_density(dir.file("a.dvol")), FormatError);
  write_text(dir.file("b.dvol"), "DVOL 1\n1 2 2\n1 2\n1.5 0.5\nDATA\n\x01\x02\x03");
  EXPECT_THROW((void)read_density(dir.file("b.dvol")), FormatError);
  write_text(dir.file("c.dvol"), "DVOL 1\n2 1 1\n1 2\n1.5 0.5\n1.2 0.8\nDATA\n");
  EXPECT_THROW((void)read_density(dir.file("c.dvol")), FormatError);
}
