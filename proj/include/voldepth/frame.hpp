#pragma once

#include <memory>
#include <optional>

#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"
#include "voldepth/losses.hpp"

namespace voldepth {

struct Scene;  // analytic geometry behind synthetic pairs (synthscene.hpp)

/// A target/source image pair with whatever ground truth is known.
struct FramePair {
  Image target;  // 3 x H x W in [0, 1]
  Image source;
  Intrinsics intrinsics;  // shared by both frames
  std::optional<DepthMap> gt_depth_t;
  std::optional<DepthMap> gt_depth_s;
  std::optional<RigidTransform> gt_T_ts;  // target -> source
  std::optional<BrightnessParams> gt_brightness;
  std::shared_ptr<const Scene> scene;

  [[nodiscard]] int height() const { return target.height(); }
  [[nodiscard]] int width() const { return target.width(); }
  [[nodiscard]] bool has_depth() const { return gt_depth_t.has_value(); }
};

}  // namespace voldepth
