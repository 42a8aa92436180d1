#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "voldepth/rendering.hpp"

using namespace voldepth;

namespace {

double rel(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

std::vector<double> ray_of(const Volume& v, int y, int x) {
  std::vector<double> out;
  for (int k = 0; k < v.channels(); ++k) out.push_back(v(k, y, x));
  return out;
}

}  // namespace

TEST(Planes, StratifiedStaysInsideBins) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = sample_planes(8, 1.0, 5.0, PlaneSampling::stratified, rng);
    ASSERT_NO_THROW(p.validate());
    for (int k = 0; k < 8; ++k) {
      EXPECT_GE(p.depths[k], 1.0 + 0.5 * k);
      EXPECT_LT(p.depths[k], 1.0 + 0.5 * (k + 1));
    }
    double total = 0;
    for (double d : p.deltas) total += d;
    EXPECT_NEAR(p.depths.front() + total, 5.0, 1e-12);
  }
}

TEST(Planes, MidpointAndErrors) {
  const auto p = midpoint_planes(4, 0.0, 4.0);
  EXPECT_EQ(p.depths, (std::vector<double>{0.5, 1.5, 2.5, 3.5}));
  EXPECT_EQ(p.deltas, (std::vector<double>{1.0, 1.0, 1.0, 0.5}));
  std::mt19937_64 rng(0);
  EXPECT_THROW((void)sample_planes(0, 1, 2, PlaneSampling::midpoint, rng), std::domain_error);
  EXPECT_THROW((void)sample_planes(4, 2, 2, PlaneSampling::midpoint, rng), std::domain_error);
  EXPECT_THROW((void)sample_planes(4, -1, 2, PlaneSampling::midpoint, rng), std::domain_error);
}

TEST(Activation, SoftplusRoundTrip) {
  for (double s : {1e-6, 0.01, 0.5, 3.0, 40.0, 500.0}) {
    EXPECT_LT(rel(softplus(inverse_softplus(s)), s), 1e-12) << s;
  }
  EXPECT_GT(softplus(-50.0), 0.0);
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  const double h = 1e-6;
  for (double x : {-3.0, 0.0, 2.5}) {
    EXPECT_NEAR(softplus_grad(x), (softplus(x + h) - softplus(x - h)) / (2 * h), 1e-9);
  }
}

TEST(Compositing, MatchesHighPrecisionDirectSum) {
  std::mt19937_64 rng(2);
  for (int kk : {1, 4, 8, 24, 32}) {
    for (double hi : {0.05, 1.0, 30.0}) {
      const auto sigma = oracle::random_volume(kk, 3, 4, rng, 0.0, hi);
      const auto planes = sample_planes(kk, 1.0, 6.0, PlaneSampling::stratified, rng);
      const auto rw = compute_weights(sigma, planes);
      const auto depth = render_depth(rw, planes);
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
          const auto ref = oracle::composite_direct(ray_of(sigma, y, x),
                                                    planes.deltas, planes.depths);
          for (int k = 0; k < kk; ++k) {
            EXPECT_LT(rel(rw.transmittance(k, y, x), ref.transmittance[k]), 1e-12);
            EXPECT_LT(rel(rw.weights(k, y, x), ref.weights[k]), 1e-12);
          }
          EXPECT_LT(rel(depth.z(y, x), ref.depth), 1e-12);
        }
      }
    }
  }
}

TEST(Compositing, ColorIsWeightedSum) {
  std::mt19937_64 rng(3);
  const int kk = 6;
  const auto sigma = oracle::random_volume(kk, 2, 3, rng, 0.0, 2.0);
  const auto colors = oracle::random_volume(3 * kk, 2, 3, rng, 0.0, 1.0);
  const auto planes = midpoint_planes(kk, 1.0, 4.0);
  const auto img = render_color(compute_weights(sigma, planes), colors);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) {
      const auto ref = oracle::composite_direct(ray_of(sigma, y, x), planes.deltas,
                                                planes.depths);
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = 0; k < kk; ++k) acc += ref.weights[k] * colors(3 * k + c, y, x);
        EXPECT_LT(rel(img(c, y, x), acc), 1e-12);
      }
    }
  }
  EXPECT_THROW((void)render_color(compute_weights(sigma, planes), Grid<double>(3, 2, 3)),
               std::invalid_argument);
}

TEST(Compositing, WeightInvariants) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int kk = 1 + trial % 32;
    const auto sigma = oracle::random_volume(kk, 1, 1, rng, 0.0, trial % 3 == 0 ? 100.0 : 1.0);
    const auto planes = sample_planes(kk, 0.5, 10.0, PlaneSampling::stratified, rng);
    const auto rw = compute_weights(sigma, planes);
    double sum = 0, tau = 0;
    EXPECT_EQ(rw.transmittance[0], 1.0);
    for (int k = 0; k < kk; ++k) {
      if (k > 0) {
        EXPECT_LE(rw.transmittance[k], rw.transmittance[k - 1]);
      }
      EXPECT_GE(rw.weights[k], 0.0);
      EXPECT_LE(rw.weights[k], 1.0);
      sum += rw.weights[k];
      tau += sigma[k] * planes.deltas[k];
    }
    EXPECT_LE(sum, 1.0 + 1e-15);
    if (tau > 20) {
      EXPECT_GT(sum, 1.0 - 1e-6);
    }
  }
}

TEST(Compositing, DenserFrontPlaneNeverDeepensDepth) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto sigma = oracle::random_volume(8, 1, 1, rng, 0.0, 2.0);
    const auto planes = sample_planes(8, 1.0, 5.0, PlaneSampling::stratified, rng);
    const double before = render_depth(compute_weights(sigma, planes), planes).z[0];
    sigma[0] += 0.5;
    const double after = render_depth(compute_weights(sigma, planes), planes).z[0];
    EXPECT_LE(after, before);
  }
}

TEST(Compositing, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(6);
  for (int kk : {1, 3, 9}) {
    auto sigma = oracle::random_volume(kk, 1, 1, rng, 0.05, 3.0);
    const auto planes = sample_planes(kk, 1.0, 4.0, PlaneSampling::stratified, rng);
    std::vector<double> s(sigma.values().begin(), sigma.values().end());
    std::vector<double> t(kk), w(kk), d(kk, 0.0);
    composite_ray(s, planes.deltas, t, w);
    composite_ray_backward(s, planes.deltas, t, w, planes.depths, 1.0, d);
    for (int k = 0; k < kk; ++k) {
      const double h = 1e-6;
      auto depth_with = [&](double v) {
        auto s2 = s;
        s2[k] = v;
        return oracle::composite_direct(s2, planes.deltas, planes.depths).depth;
      };
      const double fd = (depth_with(s[k] + h) - depth_with(s[k] - h)) / (2 * h);
      EXPECT_NEAR(d[k], fd, 1e-7 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Compositing, ShapeMismatchThrows) {
  EXPECT_THROW((void)compute_weights(Volume(3, 2, 2), midpoint_planes(4, 1, 2)),
               std::invalid_argument);
}

TEST(Compositing, OpaqueVolumeReproducesDepth) {
  const auto planes = midpoint_planes(24, 1.0, 6.0);
  Field depth(1, 1, 5);
  const double zs[] = {0.5, 1.2, 2.0, 3.333, 5.99};
  for (int i = 0; i < 5; ++i) depth[i] = zs[i];
  const auto raw = opaque_raw_from_depth(depth, planes);
  const auto z = render_depth(compute_weights(activate_density(raw), planes), planes);
  const double expect[] = {planes.depths.front(), 1.2, 2.0, 3.333, planes.depths.back()};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(z.z[i], expect[i], 1e-9) << i;
}

TEST(Embedding, BoundedAndPeriodic) {
  for (double z : {0.0, 0.13, 0.5, 0.97}) {
    const auto e = embed_depth(z, 8);
    const auto e2 = embed_depth(z + 2.0, 8);
    ASSERT_EQ(e.size(), 8u);
    for (std::size_t i = 0; i < e.size(); ++i) {
      EXPECT_LE(std::abs(e[i]), 1.0);
      EXPECT_NEAR(e[i], e2[i], 1e-12);
    }
    EXPECT_NEAR(e[0], std::sin(std::numbers::pi * z), 1e-15);
    EXPECT_NEAR(e[3], std::cos(2 * std::numbers::pi * z), 1e-15);
  }
  EXPECT_THROW((void)embed_depth(0.5, 3), std::domain_error);
}

TEST(CrossQuery, MatchesTrilinearOracle) {
  std::mt19937_64 rng(7);
  const Intrinsics k{20.0, 20.0, 7.5, 5.5, 16, 12};
  const auto sigma = oracle::random_volume(6, 12, 16, rng, 0.0, 2.0);
  const auto planes = sample_planes(6, 1.0, 5.0, PlaneSampling::stratified, rng);
  std::uniform_real_distribution<double> ux(-0.5, 16.5), uy(-0.5, 12.5), uz(0.5, 5.5);
  int valid = 0;
  for (int i = 0; i < 2000; ++i) {
    const double z = uz(rng);
    const Vec3 p(z * (ux(rng) - k.cx) / k.fx, z * (uy(rng) - k.cy) / k.fy, z);
    const auto got = query_density(sigma, planes, p, k);
    const double ref = oracle::density_at(sigma, planes.depths, 1.0, 5.0, k, p);
    ASSERT_EQ(got.valid, !std::isnan(ref));
    if (!got.valid) continue;
    ++valid;
    EXPECT_NEAR(got.sigma, ref, 1e-12);
  }
  EXPECT_GT(valid, 500);
}

TEST(CrossQuery, TrilinearPartialsMatchDifferences) {
  std::mt19937_64 rng(8);
  const Intrinsics k{20.0, 20.0, 7.5, 5.5, 16, 12};
  const auto sigma = oracle::random_volume(5, 12, 16, rng, 0.0, 2.0);
  const auto planes = midpoint_planes(5, 1.0, 6.0);
  const Vec3 p(0.31, -0.12, 2.71);
  const auto loc = locate_in_volume(p, planes, k);
  ASSERT_TRUE(loc.valid);
  const auto v = trilinear_at(sigma, planes, loc, p.z());
  const double h = 1e-6;
  auto at = [&](double x, double y, double z) {
    return oracle::density_at(sigma, planes.depths, 1, 6, k,
                              {z * (x - k.cx) / k.fx, z * (y - k.cy) / k.fy, z});
  };
  const double x = loc.pixel.x(), y = loc.pixel.y(), z = p.z();
  EXPECT_NEAR(v.dx, (at(x + h, y, z) - at(x - h, y, z)) / (2 * h), 1e-7);
  EXPECT_NEAR(v.dy, (at(x, y + h, z) - at(x, y - h, z)) / (2 * h), 1e-7);
  EXPECT_NEAR(v.dz, (at(x, y, z + h) - at(x, y, z - h)) / (2 * h), 1e-7);
}

TEST(CrossRender, IdentityReproducesOwnDepth) {
  std::mt19937_64 rng(9);
  const Intrinsics k{20.0, 20.0, 7.5, 5.5, 16, 12};
  const auto planes = sample_planes(8, 1.0, 5.0, PlaneSampling::stratified, rng);
  DensityVolume v{oracle::random_volume(8, 12, 16, rng, -3, 3), planes};
  const auto own = render_volume_depth(v);
  const auto cross = render_cross_depth(planes, v, RigidTransform::identity(), k, k);
  for (std::size_t p = 0; p < own.z.size(); ++p) {
    ASSERT_TRUE(cross.valid[p]);
    EXPECT_NEAR(cross.z[p], own.z[p], 1e-13);
  }
}

TEST(CrossRender, EmptySourceRendersZero) {
  const Intrinsics k{20.0, 20.0, 7.5, 5.5, 16, 12};
  const auto planes = midpoint_planes(6, 1.0, 5.0);
  DensityVolume v{Volume(6, 12, 16, -800.0), planes};
  RigidTransform t;
  t.translation = {0.05, 0.0, 0.0};
  const auto cross = render_cross_depth(planes, v, t, k, k);
  std::size_t valid = 0;
  for (std::size_t p = 0; p < cross.z.size(); ++p) {
    if (!cross.valid[p]) continue;
    ++valid;
    EXPECT_EQ(cross.z[p], 0.0);
  }
  EXPECT_GT(valid, cross.z.size() / 2);
}

TEST(CrossRender, MatchesPerSampleOracle) {
  const Intrinsics k{20.0, 20.0, 7.5, 5.5, 16, 12};
  const auto planes = midpoint_planes(10, 1.0, 6.0);
  Volume sigma(10, 12, 16);
  for (int c = 0; c < 10; ++c) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 16; ++x) {
        sigma(c, y, x) = 0.3 + 0.1 * std::sin(0.2 * x) * std::cos(0.15 * y) + 0.01 * c;
      }
    }
  }
  Volume raw(10, 12, 16);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = inverse_softplus(sigma[i]);
  const DensityVolume v{raw, planes};
  const RigidTransform t = se3_exp(Twist{{0.004, -0.003, 0.002}, {0.03, 0.01, -0.01}});
  const auto cross = render_cross_depth(planes, v, t, k, k);

  int checked = 0;
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (!cross.valid(y, x)) continue;
      const Vec3 ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      // Independent composite over the target-plane samples.
      std::vector<double> sig(10);
      bool inside = true;
      for (int i = 0; i < 10; ++i) {
        sig[i] = oracle::density_at(sigma, planes.depths, 1, 6, k,
                                    t.apply(planes.depths[i] * ray));
        inside = inside && !std::isnan(sig[i]);
      }
      ASSERT_TRUE(inside) << x << "," << y;
      const double z = oracle::composite_direct(sig, planes.deltas, planes.depths).depth;
      ++checked;
      EXPECT_LT(rel(cross.z(y, x), z), 1e-12) << x << "," << y;
    }
  }
  EXPECT_GT(checked, 100);
}
