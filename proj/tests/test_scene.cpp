#include <gtest/gtest.h>

#include "voldepth/regularization.hpp"
#include "voldepth/scene.hpp"

using namespace voldepth;

namespace {

SceneSpec small_spec(Layout layout, std::uint64_t seed) {
  SceneSpec s;
  s.layout = layout;
  s.width = 32;
  s.height = 24;
  s.texture_scale = 16;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Scene, NamesRoundTrip) {
  for (auto l : {Layout::single_plane, Layout::two_plane_occluder, Layout::staircase,
                 Layout::sphere_field}) {
    EXPECT_EQ(parse_layout(layout_name(l)), l);
  }
  for (auto t : {Texture::checker, Texture::value_noise, Texture::stripes}) {
    EXPECT_EQ(parse_texture(texture_name(t)), t);
  }
  EXPECT_THROW((void)parse_layout("cube"), std::invalid_argument);
}

TEST(Scene, SpecValidation) {
  SceneSpec s;
  s.width = 8;
  EXPECT_THROW(generate_pair(s), std::domain_error);
  s = SceneSpec{};
  s.layout = Layout::staircase;
  s.depth_far = s.depth_near;
  EXPECT_THROW(generate_pair(s), std::domain_error);
  s = SceneSpec{};
  s.gain = 1.5;
  EXPECT_THROW(generate_pair(s), std::domain_error);
  s = SceneSpec{};
  s.min_gradient_energy = 1.0;
  EXPECT_THROW(generate_pair(s), std::domain_error);
}

TEST(Scene, SinglePlaneIdentityPose) {
  auto s = small_spec(Layout::single_plane, 1);
  s.motion = RigidTransform::identity();
  const auto p = generate_pair(s);
  for (std::size_t i = 0; i < p.gt_depth_t->z.size(); ++i) {
    EXPECT_EQ(p.gt_depth_t->z[i], s.depth_near);
    EXPECT_EQ(p.gt_depth_s->z[i], s.depth_near);
  }
  EXPECT_EQ(p.source, p.target);
  EXPECT_EQ(count_set(gt_occlusion(p)), p.target.plane_size());
}

TEST(Scene, Deterministic) {
  for (auto l : {Layout::two_plane_occluder, Layout::sphere_field}) {
    const auto a = generate_pair(small_spec(l, 5));
    const auto b = generate_pair(small_spec(l, 5));
    EXPECT_EQ(a.target, b.target);
    EXPECT_EQ(a.source, b.source);
    EXPECT_EQ(a.gt_depth_t->z, b.gt_depth_t->z);
    EXPECT_EQ(a.gt_T_ts->matrix(), b.gt_T_ts->matrix());
  }
  EXPECT_NE(generate_pair(small_spec(Layout::single_plane, 1)).target,
            generate_pair(small_spec(Layout::single_plane, 2)).target);
}

TEST(Scene, ImagesStayInRangeAndCarryGain) {
  auto s = small_spec(Layout::sphere_field, 3);
  s.gain = 1.1;
  s.bias = 0.02;
  const auto p = generate_pair(s);
  for (double v : p.target.values()) {
    EXPECT_GE(v, 0.1 - 1e-12);
    EXPECT_LE(v, 0.85 + 1e-12);
  }
  for (double v : p.source.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(*p.gt_brightness, (BrightnessParams{1.1, 0.02}));
}

TEST(Scene, StaircaseTakesExactStepValues) {
  auto s = small_spec(Layout::staircase, 4);
  s.steps = 4;
  const auto p = generate_pair(s);
  const std::vector<double> steps{2.0, 2.0 + 2.0 / 3, 2.0 + 4.0 / 3, 4.0};
  std::vector<int> seen(4, 0);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const double z = p.gt_depth_t->z(y, x);
      int match = -1;
      for (int i = 0; i < 4; ++i) {
        if (std::abs(z - steps[i]) < 1e-12) match = i;
      }
      ASSERT_GE(match, 0) << z;
      ++seen[match];
      EXPECT_EQ(match, x == 0 ? 0 : (x - 1) / 8);  // edges at columns 8.37, 16.37, 24.37
    }
  }
  for (int n : seen) EXPECT_GT(n, 0);
}

TEST(Scene, DepthConsistentWithRayCasting) {
  const auto p = generate_pair(small_spec(Layout::sphere_field, 6));
  const auto& k = p.intrinsics;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 dir((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const auto hit = p.scene->cast(Vec3::Zero(), dir);
      ASSERT_TRUE(hit.valid);
      EXPECT_NEAR(hit.point.z(), p.gt_depth_t->z(y, x), 1e-9);
      // Source depth: the same surfaces seen from the moved camera.
      const RigidTransform st = inverse(*p.gt_T_ts);
      const auto hs = p.scene->cast(st.translation, st.rotation * dir);
      ASSERT_TRUE(hs.valid);
      EXPECT_NEAR(hs.t, p.gt_depth_s->z(y, x), 1e-9);
    }
  }
}

TEST(Scene, WarpReproducesTargetOnResamplingSupport) {
  for (auto l : {Layout::single_plane, Layout::two_plane_occluder, Layout::staircase,
                 Layout::sphere_field}) {
    for (auto t : {Texture::checker, Texture::value_noise, Texture::stripes}) {
      SceneSpec s;
      s.layout = l;
      s.texture = t;
      s.seed = 7;
      s.gain = 1.1;
      s.rotation = 0.02;
      s.translation = 0.2;
      FramePair p;
      try {
        p = generate_pair(s);
      } catch (const std::domain_error&) {
        continue;  // rejected as too flat
      }
      const auto keep = resampling_support(p);
      EXPECT_GT(count_set(keep), p.target.plane_size() / 2);
      double worst = 0;
      for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
          if (!keep(y, x)) continue;
          const Vec3 q = p.gt_T_ts->apply(p.gt_depth_t->z(y, x) * pixel_ray(x, y, p.intrinsics));
          const auto px = project(q, p.intrinsics).pixel;
          for (int c = 0; c < 3; ++c) {
            const double v = bilinear_sample(p.source, px, c).value / 1.1;
            worst = std::max(worst, std::abs(v - p.target(c, y, x)));
          }
        }
      }
      EXPECT_LT(worst, 2.0 / 255) << layout_name(l) << " " << texture_name(t);
    }
  }
}

TEST(GtOcclusion, OccluderOverSourceLeftHalf) {
  // Background at z = 4; an occluder at z = 2 covering x < 0 of the source
  // camera, which sits one unit left of the target camera.
  auto scene = std::make_shared<Scene>();
  scene->patches.push_back({4.0});
  Patch occ{2.0};
  occ.x_hi = -1.0;
  scene->patches.push_back(occ);
  FramePair p;
  p.intrinsics = {16.0, 16.0, 7.5, 7.5, 16, 16};
  p.gt_depth_t = DepthMap(16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      p.gt_depth_t->z(y, x) = scene->cast(Vec3::Zero(), pixel_ray(x, y, p.intrinsics)).t;
      p.gt_depth_t->valid(y, x) = 1;
    }
  }
  RigidTransform t;
  t.translation = {1.0, 0.0, 0.0};
  p.gt_T_ts = t;
  p.scene = scene;
  const auto m = gt_occlusion(p);
  // Columns 0..3 hide behind the occluder, 12..15 leave the source image.
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) EXPECT_EQ(m(y, x), x >= 4 && x <= 11) << x;
  }
}

TEST(GtOcclusion, LateralMotionOccludesAndMatchesDepthTest) {
  auto s = small_spec(Layout::two_plane_occluder, 2);
  s.width = s.height = 32;
  s.focal = 1.0;
  RigidTransform t;
  t.translation = {0.25, 0.0, 0.0};  // disparities of 4 and 2 pixels
  s.motion = t;
  const auto p = generate_pair(s);
  const auto gt = gt_occlusion(p);
  const auto est = occlusion_mask(*p.gt_depth_t, *p.gt_depth_s, t, p.intrinsics,
                                  p.intrinsics, 0.03);
  EXPECT_LT(count_set(gt), gt.size());
  EXPECT_EQ(gt, est);
}

TEST(GtOcclusion, ZeroMotionAllVisible) {
  auto s = small_spec(Layout::two_plane_occluder, 3);
  s.motion = RigidTransform::identity();
  const auto p = generate_pair(s);
  EXPECT_EQ(count_set(gt_occlusion(p)), p.target.plane_size());
}
