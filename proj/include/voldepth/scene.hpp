#pragma once

// Procedural RGB-D pairs with exact depth, pose and visibility.
//
// A scene is a handful of analytic surfaces (fronto-parallel rectangles and
// spheres) placed in the target camera frame and painted with a smooth solid
// texture. Both frames are ray cast from the same surfaces.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/frame.hpp"
#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"
#include "voldepth/losses.hpp"

namespace voldepth {

enum class Layout { single_plane, two_plane_occluder, staircase, sphere_field };
enum class Texture { checker, value_noise, stripes };

inline const char* layout_name(Layout l) {
  switch (l) {
    case Layout::single_plane: return "single-plane";
    case Layout::two_plane_occluder: return "two-plane-occluder";
    case Layout::staircase: return "staircase";
    case Layout::sphere_field: return "sphere-field";
  }
  return "?";
}

inline Layout parse_layout(const std::string& s) {
  for (Layout l : {Layout::single_plane, Layout::two_plane_occluder,
                   Layout::staircase, Layout::sphere_field}) {
    if (s == layout_name(l)) return l;
  }
  throw std::invalid_argument("unknown layout '" + s + "'");
}

inline const char* texture_name(Texture t) {
  switch (t) {
    case Texture::checker: return "checker";
    case Texture::value_noise: return "noise";
    case Texture::stripes: return "stripes";
  }
  return "?";
}

inline Texture parse_texture(const std::string& s) {
  for (Texture t : {Texture::checker, Texture::value_noise, Texture::stripes}) {
    if (s == texture_name(t)) return t;
  }
  throw std::invalid_argument("unknown texture '" + s + "'");
}

struct SceneSpec {
  Layout layout = Layout::single_plane;
  Texture texture = Texture::checker;
  /// Texture period in pixels, measured on a surface at depth_far.
  double texture_scale = 32.0;
  /// single-plane sits at depth_near; other layouts span the whole range.
  double depth_near = 2.0;
  double depth_far = 4.0;
  int steps = 4;  // staircase only
  /// Magnitude of the random target-to-source motion. Rotation is about a
  /// random axis; translation is mostly lateral.
  double rotation = 0.01;
  double translation = 0.1;
  /// Overrides the random motion when set.
  std::optional<RigidTransform> motion;
  double gain = 1.0;
  double bias = 0.0;
  int width = 64;
  int height = 64;
  double focal = 1.0;  // focal length in units of the image width
  std::uint64_t seed = 0;
  /// Seeds whose target image has less mean squared gradient are rejected.
  double min_gradient_energy = 1e-5;

  void validate() const {
    if (width < 16 || height < 16) {
      throw std::domain_error("scene: image must be at least 16x16");
    }
    if (!(depth_near > 0.0) || !(depth_far >= depth_near) ||
        !std::isfinite(depth_far)) {
      throw std::domain_error("scene: need 0 < depth_near <= depth_far");
    }
    if (layout != Layout::single_plane && !(depth_far > depth_near)) {
      throw std::domain_error(std::string("scene: layout ") +
                              layout_name(layout) +
                              " needs depth_far > depth_near");
    }
    if (layout == Layout::staircase && steps < 2) {
      throw std::domain_error("scene: staircase needs at least 2 steps");
    }
    if (!(texture_scale > 0.0) || !(focal > 0.0)) {
      throw std::domain_error("scene: texture_scale and focal must be positive");
    }
    if (!(rotation >= 0.0) || !(translation >= 0.0)) {
      throw std::domain_error("scene: motion magnitudes must be >= 0");
    }
    // Texture values lie in [0.1, 0.85]; the source must stay inside [0, 1].
    if (!(gain > 0.0) || 0.1 * gain + bias < 0.0 || 0.85 * gain + bias > 1.0) {
      throw std::domain_error(
          "scene: gain/bias push the source image outside [0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Surfaces and ray casting
// ---------------------------------------------------------------------------

/// Rectangle on the plane z = depth, x in [x_lo, x_hi), y in [y_lo, y_hi).
struct Patch {
  double depth = 1.0;
  double x_lo = -std::numeric_limits<double>::infinity();
  double x_hi = std::numeric_limits<double>::infinity();
  double y_lo = -std::numeric_limits<double>::infinity();
  double y_hi = std::numeric_limits<double>::infinity();
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  // unit, facing the ray origin
  int surface = -1;            // patches first, then spheres
  bool valid = false;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  const std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i) ^
                                                   splitmix(static_cast<std::uint64_t>(j))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double value_noise(std::uint64_t seed, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto i = static_cast<std::int64_t>(fu);
  const auto j = static_cast<std::int64_t>(fv);
  const double su = fade(u - fu), sv = fade(v - fv);
  const double a = lattice(seed, i, j), b = lattice(seed, i + 1, j);
  const double c = lattice(seed, i, j + 1), d = lattice(seed, i + 1, j + 1);
  const double top = a + su * (b - a);
  const double bottom = c + su * (d - c);
  return top + sv * (bottom - top);
}

}  // namespace detail

struct Scene {
  std::vector<Patch> patches;
  std::vector<Sphere> spheres;
  Texture texture = Texture::checker;
  double period = 1.0;  // texture period in scene units
  std::uint64_t seed = 0;
  std::array<double, 3> phase{};
  std::array<double, 3> mix{};
  double stripe_angle = 0.0;

  /// Nearest intersection along origin + t * dir with t > t_min.
  [[nodiscard]] Hit cast(const Vec3& origin, const Vec3& dir,
                         double t_min = 0.0) const {
    Hit best;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const Patch& p = patches[i];
      if (dir.z() == 0.0) continue;
      const double t = (p.depth - origin.z()) / dir.z();
      if (!(t > t_min) || t >= best.t) continue;
      const Vec3 q = origin + t * dir;
      if (q.x() < p.x_lo || q.x() >= p.x_hi || q.y() < p.y_lo ||
          q.y() >= p.y_hi) {
        continue;
      }
      best = {t, {q.x(), q.y(), p.depth}, {0.0, 0.0, dir.z() > 0.0 ? -1.0 : 1.0},
              static_cast<int>(i), true};
    }
    for (std::size_t i = 0; i < spheres.size(); ++i) {
      const Sphere& s = spheres[i];
      const Vec3 oc = origin - s.center;
      const double a = dir.squaredNorm();
      const double b = oc.dot(dir);
      const double c = oc.squaredNorm() - s.radius * s.radius;
      const double disc = b * b - a * c;
      if (disc < 0.0) continue;
      const double root = std::sqrt(disc);
      for (double t : {(-b - root) / a, (-b + root) / a}) {
        if (t > t_min && t < best.t) {
          const Vec3 q = origin + t * dir;
          Vec3 n = (q - s.center) / s.radius;
          if (n.dot(dir) > 0.0) n = -n;
          best = {t, q, n, static_cast<int>(patches.size() + i), true};
          break;
        }
      }
    }
    return best;
  }

  /// Scalar pattern in [0, 1] at a surface point.
  [[nodiscard]] double pattern(const Vec3& p, int channel) const {
    const double u = (p.x() + 0.41 * p.z()) / period + phase[channel];
    const double v = (p.y() + 0.27 * p.z()) / period + phase[(channel + 1) % 3];
    constexpr double kTwoPi = 6.283185307179586;
    switch (texture) {
      case Texture::checker: {
        const double su = std::tanh(1.5 * std::sin(kTwoPi * u));
        const double sv = std::tanh(1.5 * std::sin(kTwoPi * v));
        return 0.5 + 0.5 * su * sv / (std::tanh(1.5) * std::tanh(1.5));
      }
      case Texture::value_noise:
        return 0.65 * detail::value_noise(seed + channel, 2.0 * u, 2.0 * v) +
               0.35 * detail::value_noise(seed + 7 + channel, 4.0 * u, 4.0 * v);
      case Texture::stripes: {
        const double w = u * std::cos(stripe_angle) + v * std::sin(stripe_angle);
        return 0.5 + 0.5 * std::sin(kTwoPi * w);
      }
    }
    return 0.5;
  }

  /// RGB albedo in [0.1, 0.85].
  [[nodiscard]] Eigen::Vector3d color(const Vec3& p) const {
    const double g0 = pattern(p, 0);
    const double g1 = pattern(p, 1);
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k) {
      c[k] = 0.1 + 0.75 * (mix[k] * g0 + (1.0 - mix[k]) * g1);
    }
    return c;
  }
};

/// Builds the surfaces of `spec` in the target camera frame.
[[nodiscard]] inline Scene build_scene(const SceneSpec& spec,
                                       const Intrinsics& k,
                                       std::mt19937_64& rng) {
  spec.validate();
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Scene scene;
  scene.texture = spec.texture;
  scene.period = spec.texture_scale * spec.depth_far / k.fx;
  scene.seed = rng();
  for (auto& ph : scene.phase) ph = uni(rng);
  for (auto& m : scene.mix) m = 0.2 + 0.6 * uni(rng);
  scene.stripe_angle = 0.3 + 1.0 * uni(rng);

  const double near = spec.depth_near;
  const double far = spec.depth_far;
  // World x of a target pixel column at depth z.
  auto column_x = [&](double col, double z) { return (col - k.cx) * z / k.fx; };
  const double w = k.width;

  switch (spec.layout) {
    case Layout::single_plane:
      scene.patches.push_back({near});
      break;
    case Layout::two_plane_occluder: {
      scene.patches.push_back({far});
      // Strip edges fall between pixel centers.
      Patch strip{near};
      strip.x_lo = column_x(std::floor(0.3 * w) + 0.37, near);
      strip.x_hi = column_x(std::floor(0.6 * w) + 0.37, near);
      scene.patches.push_back(strip);
      break;
    }
    case Layout::staircase: {
      // Band i covers everything left of its right edge, so the nearest hit
      // yields steps of increasing depth from left to right with no gaps.
      for (int i = 0; i < spec.steps; ++i) {
        const double z = near + (far - near) * i / (spec.steps - 1);
        Patch band{z};
        if (i + 1 < spec.steps) {
          band.x_hi = column_x(std::floor(w * (i + 1) / spec.steps) + 0.37, z);
        }
        scene.patches.push_back(band);
      }
      break;
    }
    case Layout::sphere_field: {
      scene.patches.push_back({far});
      std::uniform_int_distribution<int> count(3, 6);
      const int n = count(rng);
      for (int i = 0; i < n; ++i) {
        const double r = (0.08 + 0.12 * uni(rng)) * (far - near);
        const double z = near + r + (far - near - 2.0 * r) * uni(rng);
        const double col = 0.15 * w + 0.7 * w * uni(rng);
        const double row = 0.15 * k.height + 0.7 * k.height * uni(rng);
        scene.spheres.push_back(
            {{column_x(col, z), (row - k.cy) * z / k.fy, z}, r});
      }
      break;
    }
  }
  return scene;
}

/// Random motion with rotation angle `rotation` about a uniform axis and a
/// translation of length `translation`, mostly parallel to the image plane.
[[nodiscard]] inline RigidTransform random_motion(double rotation,
                                                  double translation,
                                                  std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
  axis.normalize();
  const double phi = 6.283185307179586 *
                     std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  Vec3 dir(std::cos(phi), std::sin(phi), 0.3 * gauss(rng));
  dir.normalize();
  RigidTransform out;
  out.rotation = Eigen::AngleAxisd(rotation, axis).toRotationMatrix();
  out.translation = translation * dir;
  return out;
}

struct RenderedView {
  Image image;
  DepthMap depth;
};

/// Ray casts one view. `camera_to_scene` maps camera coordinates into the
/// scene (target) frame.
[[nodiscard]] inline RenderedView render_view(const Scene& scene,
                                              const Intrinsics& k,
                                              const RigidTransform& camera_to_scene) {
  RenderedView out{Image(3, k.height, k.width), DepthMap(k.height, k.width)};
  const Vec3& origin = camera_to_scene.translation;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      // Unit z in the camera frame, so t is the camera-frame depth.
      const Vec3 dir = camera_to_scene.rotation * pixel_ray(x, y, k);
      const Hit hit = scene.cast(origin, dir);
      if (!hit.valid) continue;
      out.depth.z(y, x) = hit.t;
      out.depth.valid(y, x) = 1;
      const auto c = scene.color(hit.point);
      for (int ch = 0; ch < 3; ++ch) out.image(ch, y, x) = c[ch];
    }
  }
  return out;
}

/// Mean squared forward difference of the channel-averaged image.
[[nodiscard]] inline double gradient_energy(const Image& img) {
  const int h = img.height(), w = img.width();
  double acc = 0.0;
  std::size_t n = 0;
  auto gray = [&](int y, int x) {
    return (img(0, y, x) + img(1, y, x) + img(2, y, x)) / 3.0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) {
        const double d = gray(y, x + 1) - gray(y, x);
        acc += d * d;
        ++n;
      }
      if (y + 1 < h) {
        const double d = gray(y + 1, x) - gray(y, x);
        acc += d * d;
        ++n;
      }
    }
  }
  return n ? acc / n : 0.0;
}

[[nodiscard]] inline Intrinsics scene_intrinsics(const SceneSpec& spec) {
  const double f = spec.focal * spec.width;
  return {f, f, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0, spec.width,
          spec.height};
}

[[nodiscard]] inline FramePair generate_pair(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  FramePair pair;
  pair.intrinsics = scene_intrinsics(spec);
  auto scene = std::make_shared<Scene>(build_scene(spec, pair.intrinsics, rng));
  const RigidTransform t_ts =
      spec.motion ? *spec.motion
                  : random_motion(spec.rotation, spec.translation, rng);

  RenderedView target = render_view(*scene, pair.intrinsics,
                                    RigidTransform::identity());
  RenderedView source = render_view(*scene, pair.intrinsics, inverse(t_ts));
  if (count_set(target.depth.valid) != target.depth.valid.size() ||
      count_set(source.depth.valid) != source.depth.valid.size()) {
    throw std::domain_error("scene: some rays miss every surface");
  }
  const double energy = gradient_energy(target.image);
  if (energy < spec.min_gradient_energy) {
    throw std::domain_error("scene: texture too flat for seed " +
                            std::to_string(spec.seed) + " (gradient energy " +
                            std::to_string(energy) + ")");
  }
  for (auto& v : source.image.values()) v = spec.gain * v + spec.bias;

  pair.target = std::move(target.image);
  pair.source = std::move(source.image);
  pair.gt_depth_t = std::move(target.depth);
  pair.gt_depth_s = std::move(source.depth);
  pair.gt_T_ts = t_ts;
  pair.gt_brightness = BrightnessParams{spec.gain, spec.bias};
  pair.scene = std::move(scene);
  return pair;
}

/// Ground-truth visibility of every target pixel's surface point from the
/// source camera. Points that project outside the source image, or behind
/// it, count as not visible.
[[nodiscard]] inline Mask gt_occlusion(const FramePair& pair) {
  if (!pair.scene || !pair.gt_depth_t || !pair.gt_T_ts) {
    throw std::invalid_argument(
        "gt_occlusion: pair lacks scene, target depth or pose");
  }
  const Intrinsics& k = pair.intrinsics;
  const RigidTransform& t_ts = *pair.gt_T_ts;
  const RigidTransform t_st = inverse(t_ts);
  Mask out(1, k.height, k.width, 0);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (!pair.gt_depth_t->valid(y, x)) continue;
      const Vec3 p_t = pair.gt_depth_t->z(y, x) * pixel_ray(x, y, k);
      const Vec3 q = t_ts.apply(p_t);
      const auto proj = project(q, k);
      if (!proj.in_front) continue;
      if (!locate_cell(proj.pixel.x(), proj.pixel.y(), k.width, k.height)
               .valid) {
        continue;
      }
      // Cast from the source center toward the point; a hit clearly before
      // it means something else is in the way.
      const Vec3 dir = t_st.rotation * (q / q.z());
      const Hit hit = pair.scene->cast(t_st.translation, dir);
      out(y, x) = !hit.valid || hit.t >= q.z() * (1.0 - 1e-9);
    }
  }
  return out;
}

/// Target pixels whose source footprint can be resampled faithfully: visible
/// in the source, all four bilinear corners of the landing cell see the same
/// surface, and that surface faces both cameras at an angle whose cosine is
/// at least `min_cos`. Footprints across depth edges or along sphere
/// silhouettes blend unrelated texture and are left out.
[[nodiscard]] inline Mask resampling_support(const FramePair& pair,
                                             double min_cos = 0.5) {
  Mask out = gt_occlusion(pair);
  const Intrinsics& k = pair.intrinsics;
  const RigidTransform& t_ts = *pair.gt_T_ts;
  const RigidTransform t_st = inverse(t_ts);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (!out(y, x)) continue;
      const Hit own = pair.scene->cast(Vec3::Zero(), pixel_ray(x, y, k));
      bool ok = own.valid &&
                own.normal.dot(-pixel_ray(x, y, k).normalized()) >= min_cos;
      const auto proj = project(t_ts.apply(own.point), k);
      const auto cell = locate_cell(proj.pixel.x(), proj.pixel.y(), k.width,
                                    k.height);
      for (int dy = 0; dy < 2 && ok; ++dy) {
        for (int dx = 0; dx < 2 && ok; ++dx) {
          const int cx = std::min(cell.x0 + dx, k.width - 1);
          const int cy = std::min(cell.y0 + dy, k.height - 1);
          const Vec3 dir = t_st.rotation * pixel_ray(cx, cy, k);
          const Hit h = pair.scene->cast(t_st.translation, dir);
          ok = h.valid && h.surface == own.surface &&
               h.normal.dot(-dir.normalized()) >= min_cos;
        }
      }
      out(y, x) = ok;
    }
  }
  return out;
}

}  // namespace voldepth
