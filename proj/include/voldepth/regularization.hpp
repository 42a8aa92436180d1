#pragma once

// Occlusion and identity masks, and the affine brightness correction applied
// to warped images.

#include <cmath>
#include <stdexcept>

#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"
#include "voldepth/losses.hpp"

namespace voldepth {

using OcclusionMask = Mask;
using IdentityMask = Mask;

/// Bilinear sample of a depth map; invalid when any corner is invalid.
[[nodiscard]] inline SampleResult sample_depth(const DepthMap& depth,
                                               const Vec2& pixel) {
  const auto cell =
      locate_cell(pixel.x(), pixel.y(), depth.width(), depth.height());
  if (!cell.valid) return {};
  const int x1 = std::min(cell.x0 + 1, depth.width() - 1);
  const int y1 = std::min(cell.y0 + 1, depth.height() - 1);
  if (!depth.valid(cell.y0, cell.x0) || !depth.valid(cell.y0, x1) ||
      !depth.valid(y1, cell.x0) || !depth.valid(y1, x1)) {
    return {};
  }
  return {interpolate_in_cell(depth.z.channel(0), depth.width(),
                              depth.height(), cell, pixel.x(), pixel.y())
              .value,
          true};
}

/// Keeps a target pixel when its surface point, moved into the source frame,
/// sits within `gamma` of the source depth seen at its projection:
///   |Z_s(p_t) - Z_s(P_ts)| < gamma.
/// Pixels that cannot be warped (invalid depth, behind the source camera,
/// outside the source image) are dropped.
[[nodiscard]] inline OcclusionMask occlusion_mask(
    const DepthMap& depth_t, const DepthMap& depth_s,
    const RigidTransform& target_to_source, const Intrinsics& k_t,
    const Intrinsics& k_s, double gamma) {
  if (!(gamma > 0.0)) {
    throw std::domain_error("occlusion_mask: gamma must be positive");
  }
  const auto warp = warp_pixels(depth_t, target_to_source, k_t, k_s);
  Mask out(1, depth_t.height(), depth_t.width(), 0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (!warp.valid[p]) continue;
    const auto seen = sample_depth(depth_s, {warp.x[p], warp.y[p]});
    if (!seen.valid) continue;
    out[p] = std::abs(warp.source_depth[p] - seen.value) < gamma;
  }
  return out;
}

/// I^ab = a I + b, unclamped.
[[nodiscard]] inline Image apply_brightness(const Image& image,
                                            const BrightnessParams& p) {
  Image out = image;
  for (auto& v : out.values()) v = p.a * v + p.b;
  return out;
}

/// Keeps pixels where the warped source explains the target strictly better
/// than the unwarped source does.
[[nodiscard]] inline IdentityMask identity_mask(const Image& target,
                                                const Image& source,
                                                const Image& warped,
                                                const SsimConstants& k = {}) {
  if (!target.same_shape(source) || !target.same_shape(warped)) {
    throw std::invalid_argument("identity_mask: image shape mismatch");
  }
  const auto pe_warped = photometric_error_map(target, warped, k);
  const auto pe_static = photometric_error_map(target, source, k);
  Mask out(1, target.height(), target.width());
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = pe_warped[p] < pe_static[p];
  }
  return out;
}

}  // namespace voldepth
