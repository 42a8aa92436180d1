#pragma once

// Pinhole cameras, rigid motions and sub-pixel sampling.
//
// Conventions: pixel centers sit at integer coordinates, x grows rightward,
// y grows downward and the camera looks down +z.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "voldepth/grid.hpp"

namespace voldepth {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw std::invalid_argument("Intrinsics: focal lengths must be positive");
    }
    if (width < 1 || height < 1) {
      throw std::invalid_argument("Intrinsics: image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
      throw std::invalid_argument(
          "Intrinsics: principal point outside the image");
    }
  }

  [[nodiscard]] Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  bool operator==(const Intrinsics&) const = default;
};

/// Tangent-space motion: omega is an axis-angle rotation, v the linear part.
struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  [[nodiscard]] Vec6 vector() const {
    Vec6 out;
    out << omega, v;
    return out;
  }
  static Twist from_vector(const Vec6& x) {
    return Twist{x.head<3>(), x.tail<3>()};
  }
};

/// Maps points from one camera frame into another: p' = R p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  [[nodiscard]] Vec3 apply(const Vec3& p) const {
    return rotation * p + translation;
  }

  [[nodiscard]] Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

[[nodiscard]] inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,  -v.z(),  v.y(),
        v.z(),  0.0,  -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

/// Exponential map of se(3). The rotation block is Rodrigues' formula; the
/// translation block applies the left Jacobian V to v.
[[nodiscard]] inline RigidTransform se3_exp(const Twist& t) {
  const double theta2 = t.omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b, c;  // sin(th)/th, (1-cos th)/th^2, (th - sin th)/th^3
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 w = skew(t.omega);
  const Mat3 w2 = w * w;
  RigidTransform out;
  out.rotation = Mat3::Identity() + a * w + b * w2;
  out.translation = (Mat3::Identity() + b * w + c * w2) * t.v;
  return out;
}

/// Applies b first, then a.
[[nodiscard]] inline RigidTransform compose(const RigidTransform& a,
                                            const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

[[nodiscard]] inline RigidTransform inverse(const RigidTransform& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -rt * t.translation};
}

/// Adjoint of T acting on twists ordered (omega, v):
/// T exp(xi) T^-1 = exp(adjoint(T) xi).
[[nodiscard]] inline Mat6 adjoint(const RigidTransform& t) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = t.rotation;
  ad.bottomRightCorner<3, 3>() = t.rotation;
  ad.bottomLeftCorner<3, 3>() = skew(t.translation) * t.rotation;
  return ad;
}

/// Left-multiplies a tangent increment onto a pose.
[[nodiscard]] inline RigidTransform retract(const RigidTransform& pose,
                                            const Vec6& increment) {
  return compose(se3_exp(Twist::from_vector(increment)), pose);
}

[[nodiscard]] inline Vec3 backproject(const Vec2& pixel, double depth,
                                      const Intrinsics& k) {
  if (!(depth > 0.0)) {
    throw std::domain_error("backproject: depth must be positive, got " +
                            std::to_string(depth));
  }
  return {depth * (pixel.x() - k.cx) / k.fx, depth * (pixel.y() - k.cy) / k.fy,
          depth};
}

/// Ray direction scaled so that its z component is 1.
[[nodiscard]] inline Vec3 pixel_ray(double x, double y, const Intrinsics& k) {
  return {(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0};
}

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool in_front = false;  // false: behind or on the camera plane
};

[[nodiscard]] inline Projection project(const Vec3& p, const Intrinsics& k) {
  Projection out;
  out.depth = p.z();
  out.in_front = p.z() > 0.0;
  if (out.in_front) {
    out.pixel = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  }
  return out;
}

/// d pixel / d point for a point in front of the camera.
[[nodiscard]] inline Eigen::Matrix<double, 2, 3> projection_jacobian(
    const Vec3& p, const Intrinsics& k) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz,
      -k.fy * p.y() * iz * iz;
  return j;
}

// ---------------------------------------------------------------------------
// Bilinear sampling
// ---------------------------------------------------------------------------

/// Coordinates within this distance outside the grid are treated as lying on
/// its border. This absorbs round-off from project(backproject(.)) chains.
inline constexpr double kBoundsSlack = 1e-9;

/// Interpolation cell: the top-left corner of the 2x2 neighbourhood used.
struct BilinearCell {
  int x0 = 0;
  int y0 = 0;
  bool valid = false;
};

[[nodiscard]] inline int lower_corner(double c, int extent) {
  const int hi = std::max(extent - 2, 0);
  return std::clamp(static_cast<int>(std::floor(c)), 0, hi);
}

/// Finds the cell holding (x, y). A coordinate on an interior grid line
/// belongs to the cell on its right/below (right-limit convention).
[[nodiscard]] inline BilinearCell locate_cell(double x, double y, int width,
                                              int height) {
  BilinearCell cell;
  if (!std::isfinite(x) || !std::isfinite(y)) return cell;
  if (x < -kBoundsSlack || x > width - 1 + kBoundsSlack) return cell;
  if (y < -kBoundsSlack || y > height - 1 + kBoundsSlack) return cell;
  cell.x0 = lower_corner(x, width);
  cell.y0 = lower_corner(y, height);
  cell.valid = true;
  return cell;
}

/// Interpolated value and its partials with respect to x and y.
struct BilinearValue {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Evaluates the bilinear patch of `cell` at (x, y). The coordinate may lie
/// marginally outside the cell; the patch is then extended affinely.
[[nodiscard]] inline BilinearValue interpolate_in_cell(
    std::span<const double> plane, int width, int height,
    const BilinearCell& cell, double x, double y) {
  const int x1 = std::min(cell.x0 + 1, width - 1);
  const int y1 = std::min(cell.y0 + 1, height - 1);
  const double fx = width > 1 ? x - cell.x0 : 0.0;
  const double fy = height > 1 ? y - cell.y0 : 0.0;
  const double v00 = plane[cell.y0 * width + cell.x0];
  const double v01 = plane[cell.y0 * width + x1];
  const double v10 = plane[y1 * width + cell.x0];
  const double v11 = plane[y1 * width + x1];
  const double top = v00 + fx * (v01 - v00);
  const double bottom = v10 + fx * (v11 - v10);
  BilinearValue out;
  out.value = top + fy * (bottom - top);
  if (width > 1) out.dx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
  if (height > 1) out.dy = bottom - top;
  return out;
}

/// Adds g * d(value)/d(plane) into `dplane`.
inline void scatter_in_cell(std::span<double> dplane, int width, int height,
                            const BilinearCell& cell, double x, double y,
                            double g) {
  const int x1 = std::min(cell.x0 + 1, width - 1);
  const int y1 = std::min(cell.y0 + 1, height - 1);
  const double fx = width > 1 ? x - cell.x0 : 0.0;
  const double fy = height > 1 ? y - cell.y0 : 0.0;
  dplane[cell.y0 * width + cell.x0] += g * (1.0 - fx) * (1.0 - fy);
  dplane[cell.y0 * width + x1] += g * fx * (1.0 - fy);
  dplane[y1 * width + cell.x0] += g * (1.0 - fx) * fy;
  dplane[y1 * width + x1] += g * fx * fy;
}

struct SampleResult {
  double value = 0.0;
  bool valid = false;
};

/// Samples channel `c` of `grid` at a real-valued pixel coordinate.
/// Out-of-bounds coordinates give {0, false}.
[[nodiscard]] inline SampleResult bilinear_sample(const Grid<double>& grid,
                                                  const Vec2& coords,
                                                  int c = 0) {
  const auto cell =
      locate_cell(coords.x(), coords.y(), grid.width(), grid.height());
  if (!cell.valid) return {};
  return {interpolate_in_cell(grid.channel(c), grid.width(), grid.height(),
                              cell, coords.x(), coords.y())
              .value,
          true};
}

// ---------------------------------------------------------------------------
// Warping
// ---------------------------------------------------------------------------

struct DepthMap {
  Field z;
  Mask valid;

  DepthMap() = default;
  DepthMap(int height, int width)
      : z(1, height, width, 0.0), valid(1, height, width, 0) {}

  [[nodiscard]] int height() const { return z.height(); }
  [[nodiscard]] int width() const { return z.width(); }
};

/// Per target pixel: where it lands in the source image, its depth in the
/// source frame, and whether the landing spot is usable.
struct WarpField {
  Field x;
  Field y;
  Field source_depth;
  Mask valid;
};

/// Back-projects each target pixel with its depth, moves it into the source
/// frame with `target_to_source` and re-projects it. Pixels behind the source
/// camera or landing outside the source image are flagged invalid.
[[nodiscard]] inline WarpField warp_pixels(const DepthMap& depth_t,
                                           const RigidTransform& target_to_source,
                                           const Intrinsics& k_t,
                                           const Intrinsics& k_s) {
  const int h = depth_t.height();
  const int w = depth_t.width();
  WarpField out{Field(1, h, w), Field(1, h, w), Field(1, h, w),
                Mask(1, h, w, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z = depth_t.z(y, x);
      if (!depth_t.valid(y, x) || !(z > 0.0)) continue;
      const Vec3 q = target_to_source.apply(z * pixel_ray(x, y, k_t));
      const auto proj = project(q, k_s);
      out.source_depth(y, x) = q.z();
      if (!proj.in_front) continue;
      out.x(y, x) = proj.pixel.x();
      out.y(y, x) = proj.pixel.y();
      out.valid(y, x) =
          locate_cell(proj.pixel.x(), proj.pixel.y(), k_s.width, k_s.height)
              .valid;
    }
  }
  return out;
}

}  // namespace voldepth
