#pragma once

// Frustum-plane density volumes and their compositing into depth and color.
//
// Along every pixel ray the volume holds K densities sigma_k on fronto-parallel
// planes at depths z_k with interval lengths delta_k. Compositing uses
//
//   T_k = exp(-sum_{j<k} sigma_j delta_j),   w_k = T_k (1 - exp(-sigma_k delta_k))
//   Z   = sum_k w_k z_k,                     C   = sum_k w_k c_k.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"

namespace voldepth {

enum class PlaneSampling { stratified, midpoint };

/// Plane depths (ascending) and the interval each plane owns.
struct PlaneSet {
  std::vector<double> depths;
  std::vector<double> deltas;
  double z_min = 0.0;
  double z_max = 0.0;

  [[nodiscard]] int size() const { return static_cast<int>(depths.size()); }

  void validate() const {
    if (depths.empty() || depths.size() != deltas.size()) {
      throw std::invalid_argument("PlaneSet: depths/deltas malformed");
    }
    for (std::size_t k = 0; k < depths.size(); ++k) {
      if (!(deltas[k] > 0.0)) {
        throw std::invalid_argument("PlaneSet: non-positive interval");
      }
      if (k > 0 && !(depths[k] > depths[k - 1])) {
        throw std::invalid_argument("PlaneSet: depths not ascending");
      }
    }
    if (depths.front() < z_min || depths.back() > z_max) {
      throw std::invalid_argument("PlaneSet: depths outside [z_min, z_max]");
    }
  }
};

/// Splits [z_min, z_max] into K equal bins and places one plane per bin,
/// either at the bin center or uniformly at random inside it. Every plane owns
/// the gap to the next plane; the last one owns the gap to z_max.
[[nodiscard]] inline PlaneSet sample_planes(int count, double z_min,
                                            double z_max, PlaneSampling mode,
                                            std::mt19937_64& rng) {
  if (count < 1) throw std::domain_error("sample_planes: K must be >= 1");
  if (!(z_min >= 0.0) || !(z_max > z_min) || !std::isfinite(z_max)) {
    throw std::domain_error("sample_planes: invalid depth range [" +
                            std::to_string(z_min) + ", " +
                            std::to_string(z_max) + "]");
  }
  PlaneSet planes;
  planes.z_min = z_min;
  planes.z_max = z_max;
  planes.depths.resize(count);
  planes.deltas.resize(count);
  const double bin = (z_max - z_min) / count;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    const double offset = mode == PlaneSampling::midpoint ? 0.5 : unit(rng);
    planes.depths[k] = z_min + (k + offset) * bin;
  }
  for (int k = 0; k + 1 < count; ++k) {
    planes.deltas[k] = planes.depths[k + 1] - planes.depths[k];
  }
  planes.deltas[count - 1] = z_max - planes.depths[count - 1];
  return planes;
}

[[nodiscard]] inline PlaneSet midpoint_planes(int count, double z_min,
                                              double z_max) {
  std::mt19937_64 unused(0);
  return sample_planes(count, z_min, z_max, PlaneSampling::midpoint, unused);
}

// ---------------------------------------------------------------------------
// Density activation
// ---------------------------------------------------------------------------

[[nodiscard]] inline double softplus(double x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/// Derivative of softplus, the logistic function.
[[nodiscard]] inline double softplus_grad(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[nodiscard]] inline double inverse_softplus(double sigma) {
  if (!(sigma > 0.0)) return -std::numeric_limits<double>::infinity();
  if (sigma > 30.0) return sigma + std::log(-std::expm1(-sigma));
  return std::log(std::expm1(sigma));
}

[[nodiscard]] inline Volume activate_density(const Volume& raw) {
  Volume sigma(raw.channels(), raw.height(), raw.width());
  for (std::size_t i = 0; i < raw.size(); ++i) sigma[i] = softplus(raw[i]);
  return sigma;
}

/// A K x H x W grid of unconstrained density parameters tied to its planes.
struct DensityVolume {
  Volume raw;
  PlaneSet planes;

  [[nodiscard]] Volume sigma() const { return activate_density(raw); }
};

// ---------------------------------------------------------------------------
// Per-ray compositing
// ---------------------------------------------------------------------------

/// Transmittance and weight of every sample along one ray.
inline void composite_ray(std::span<const double> sigma,
                          std::span<const double> delta,
                          std::span<double> transmittance,
                          std::span<double> weight) {
  double optical_depth = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const double tau = sigma[k] * delta[k];
    transmittance[k] = std::exp(-optical_depth);
    weight[k] = -transmittance[k] * std::expm1(-tau);
    optical_depth += tau;
  }
}

/// Accumulates upstream * d(sum_k w_k values_k)/d(sigma_k) into dsigma.
///
/// d/d sigma_k = delta_k (T_{k+1} values_k - sum_{j>k} w_j values_j)
inline void composite_ray_backward(std::span<const double> sigma,
                                   std::span<const double> delta,
                                   std::span<const double> transmittance,
                                   std::span<const double> weight,
                                   std::span<const double> values,
                                   double upstream, std::span<double> dsigma) {
  double tail = 0.0;
  for (std::size_t k = sigma.size(); k-- > 0;) {
    const double next_t = k + 1 < sigma.size()
                              ? transmittance[k + 1]
                              : transmittance[k] * std::exp(-sigma[k] * delta[k]);
    dsigma[k] += upstream * delta[k] * (next_t * values[k] - tail);
    tail += weight[k] * values[k];
  }
}

struct RenderWeights {
  Volume transmittance;  // K x H x W, in (0, 1]
  Volume weights;        // K x H x W, in [0, 1)
};

[[nodiscard]] inline RenderWeights compute_weights(const Volume& sigma,
                                                   const PlaneSet& planes) {
  const int kk = sigma.channels();
  if (kk != planes.size()) {
    throw std::invalid_argument("compute_weights: volume has " +
                                std::to_string(kk) + " planes, plane set " +
                                std::to_string(planes.size()));
  }
  RenderWeights out{Volume(kk, sigma.height(), sigma.width()),
                    Volume(kk, sigma.height(), sigma.width())};
  const std::size_t stride = sigma.plane_size();
  std::vector<double> s(kk), t(kk), w(kk);
  for (std::size_t p = 0; p < stride; ++p) {
    for (int k = 0; k < kk; ++k) s[k] = sigma[k * stride + p];
    composite_ray(s, planes.deltas, t, w);
    for (int k = 0; k < kk; ++k) {
      out.transmittance[k * stride + p] = t[k];
      out.weights[k * stride + p] = w[k];
    }
  }
  return out;
}

struct RenderOptions {
  /// Divide by sum_k w_k + epsilon. Off renders the unnormalized sum.
  bool normalize = false;
  double epsilon = 1e-6;
};

[[nodiscard]] inline DepthMap render_depth(const RenderWeights& rw,
                                           const PlaneSet& planes,
                                           const RenderOptions& opts = {}) {
  const auto& w = rw.weights;
  DepthMap out(w.height(), w.width());
  const std::size_t stride = w.plane_size();
  for (std::size_t p = 0; p < stride; ++p) {
    double z = 0.0;
    double mass = 0.0;
    for (int k = 0; k < w.channels(); ++k) {
      z += w[k * stride + p] * planes.depths[k];
      mass += w[k * stride + p];
    }
    out.z[p] = opts.normalize ? z / (mass + opts.epsilon) : z;
    out.valid[p] = 1;
  }
  return out;
}

/// `colors` holds 3K channels ordered (plane, rgb).
[[nodiscard]] inline Image render_color(const RenderWeights& rw,
                                        const Grid<double>& colors) {
  const auto& w = rw.weights;
  const int kk = w.channels();
  if (colors.channels() != 3 * kk || !colors.same_extent(w)) {
    throw std::invalid_argument("render_color: colors must be K*3 x H x W");
  }
  Image out(3, w.height(), w.width());
  const std::size_t stride = w.plane_size();
  for (int c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < stride; ++p) {
      double acc = 0.0;
      for (int k = 0; k < kk; ++k) {
        acc += w[k * stride + p] * colors[(3 * k + c) * stride + p];
      }
      out[c * stride + p] = acc;
    }
  }
  return out;
}

/// Depth rendered with the volume's own planes.
[[nodiscard]] inline DepthMap render_volume_depth(const DensityVolume& v,
                                                  const RenderOptions& opts = {}) {
  return render_depth(compute_weights(v.sigma(), v.planes), v.planes, opts);
}

/// Per-pixel sum of weights; below 0.5 the rendered depth is mostly vacuum.
[[nodiscard]] inline Field accumulated_opacity(const RenderWeights& rw) {
  const auto& w = rw.weights;
  Field out(1, w.height(), w.width());
  const std::size_t stride = w.plane_size();
  for (std::size_t p = 0; p < stride; ++p) {
    for (int k = 0; k < w.channels(); ++k) out[p] += w[k * stride + p];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Depth embedding
// ---------------------------------------------------------------------------

/// (sin(2^0 pi z), cos(2^0 pi z), ..., sin(2^(E/2-1) pi z), cos(...)) for a
/// depth already normalized by z_max.
[[nodiscard]] inline std::vector<double> embed_depth(double z_normalized,
                                                     int dims = 16) {
  if (dims < 2 || dims % 2 != 0) {
    throw std::domain_error("embed_depth: dimension must be even and >= 2, got " +
                            std::to_string(dims));
  }
  std::vector<double> e(dims);
  double freq = std::numbers::pi;
  for (int i = 0; i < dims / 2; ++i, freq *= 2.0) {
    e[2 * i] = std::sin(freq * z_normalized);
    e[2 * i + 1] = std::cos(freq * z_normalized);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Cross-frame density queries
// ---------------------------------------------------------------------------

/// Fractional plane index of a depth. `segment` is -1 below the first plane,
/// K-1 at or beyond the last plane, and otherwise the j with
/// depths[j] <= z < depths[j+1]. Outside the planes the nearest plane's
/// density is used as long as z stays inside [z_min, z_max].
struct PlaneCoordinate {
  int segment = 0;
  bool valid = false;
};

[[nodiscard]] inline PlaneCoordinate locate_plane(double z,
                                                  const PlaneSet& planes) {
  PlaneCoordinate pc;
  if (!std::isfinite(z) || z < planes.z_min || z > planes.z_max) return pc;
  const int kk = planes.size();
  pc.valid = true;
  if (z < planes.depths.front()) {
    pc.segment = -1;
  } else if (z >= planes.depths.back()) {
    pc.segment = kk - 1;
  } else {
    const auto it =
        std::upper_bound(planes.depths.begin(), planes.depths.end(), z);
    pc.segment = static_cast<int>(it - planes.depths.begin()) - 1;
  }
  return pc;
}

/// Lower plane, upper plane, blend fraction and d fraction / dz for a
/// coordinate; the segment is held fixed so the map is affine in z.
struct PlaneBlend {
  int k0 = 0;
  int k1 = 0;
  double frac = 0.0;
  double dfrac_dz = 0.0;
};

[[nodiscard]] inline PlaneBlend plane_blend(const PlaneCoordinate& pc, double z,
                                            const PlaneSet& planes) {
  const int kk = planes.size();
  if (pc.segment < 0) return {0, 0, 0.0, 0.0};
  if (pc.segment >= kk - 1) return {kk - 1, kk - 1, 0.0, 0.0};
  const double z0 = planes.depths[pc.segment];
  const double span_z = planes.depths[pc.segment + 1] - z0;
  return {pc.segment, pc.segment + 1, (z - z0) / span_z, 1.0 / span_z};
}

/// Where a source-frame point falls in the source density grid.
struct VolumeLocation {
  BilinearCell cell;
  PlaneCoordinate plane;
  Vec2 pixel = Vec2::Zero();
  bool valid = false;
};

[[nodiscard]] inline VolumeLocation locate_in_volume(const Vec3& point,
                                                     const PlaneSet& planes,
                                                     const Intrinsics& k) {
  VolumeLocation loc;
  const auto proj = project(point, k);
  if (!proj.in_front) return loc;
  loc.pixel = proj.pixel;
  loc.cell = locate_cell(proj.pixel.x(), proj.pixel.y(), k.width, k.height);
  loc.plane = locate_plane(point.z(), planes);
  loc.valid = loc.cell.valid && loc.plane.valid;
  return loc;
}

/// Trilinear density and its partials with respect to (pixel x, pixel y, z).
struct TrilinearValue {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
};

[[nodiscard]] inline TrilinearValue trilinear_at(const Volume& sigma,
                                                 const PlaneSet& planes,
                                                 const VolumeLocation& loc,
                                                 double z) {
  const auto blend = plane_blend(loc.plane, z, planes);
  const int w = sigma.width();
  const int h = sigma.height();
  const auto a = interpolate_in_cell(sigma.channel(blend.k0), w, h, loc.cell,
                                     loc.pixel.x(), loc.pixel.y());
  const auto b = interpolate_in_cell(sigma.channel(blend.k1), w, h, loc.cell,
                                     loc.pixel.x(), loc.pixel.y());
  TrilinearValue out;
  out.value = a.value + blend.frac * (b.value - a.value);
  out.dx = a.dx + blend.frac * (b.dx - a.dx);
  out.dy = a.dy + blend.frac * (b.dy - a.dy);
  out.dz = blend.dfrac_dz * (b.value - a.value);
  return out;
}

/// Adds g * d(trilinear value)/d(sigma) into dsigma.
inline void trilinear_scatter(Volume& dsigma, const PlaneSet& planes,
                              const VolumeLocation& loc, double z, double g) {
  const auto blend = plane_blend(loc.plane, z, planes);
  const int w = dsigma.width();
  const int h = dsigma.height();
  scatter_in_cell(dsigma.channel(blend.k0), w, h, loc.cell, loc.pixel.x(),
                  loc.pixel.y(), g * (1.0 - blend.frac));
  if (blend.k1 != blend.k0 || blend.frac != 0.0) {
    scatter_in_cell(dsigma.channel(blend.k1), w, h, loc.cell, loc.pixel.x(),
                    loc.pixel.y(), g * blend.frac);
  }
}

struct DensitySample {
  double sigma = 0.0;
  bool valid = false;
};

/// Activated density of `source` at a point given in source camera
/// coordinates, interpolated over (plane, y, x).
[[nodiscard]] inline DensitySample query_density(const Volume& source_sigma,
                                                 const PlaneSet& planes,
                                                 const Vec3& point,
                                                 const Intrinsics& k_s) {
  const auto loc = locate_in_volume(point, planes, k_s);
  if (!loc.valid) return {};
  return {trilinear_at(source_sigma, planes, loc, point.z()).value, true};
}

[[nodiscard]] inline std::vector<DensitySample> query_density(
    const DensityVolume& source, std::span<const Vec3> points,
    const Intrinsics& k_s) {
  const Volume sigma = source.sigma();
  std::vector<DensitySample> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    out.push_back(query_density(sigma, source.planes, p, k_s));
  }
  return out;
}

/// Depth of the target view rendered from the source volume: samples the
/// target rays at the target plane depths, moves the samples into the source
/// frame, queries the source density there and composites with the target
/// intervals. A pixel is valid only if every sample on its ray is.
[[nodiscard]] inline DepthMap render_cross_depth(
    const PlaneSet& target_planes, const DensityVolume& source,
    const RigidTransform& target_to_source, const Intrinsics& k_t,
    const Intrinsics& k_s, const RenderOptions& opts = {}) {
  const Volume sigma_s = source.sigma();
  const int kk = target_planes.size();
  DepthMap out(k_t.height, k_t.width);
  std::vector<double> s(kk), t(kk), w(kk);
  for (int y = 0; y < k_t.height; ++y) {
    for (int x = 0; x < k_t.width; ++x) {
      const Vec3 ray = pixel_ray(x, y, k_t);
      bool valid = true;
      for (int k = 0; k < kk && valid; ++k) {
        const Vec3 q = target_to_source.apply(target_planes.depths[k] * ray);
        const auto d = query_density(sigma_s, source.planes, q, k_s);
        valid = d.valid;
        s[k] = d.sigma;
      }
      if (!valid) continue;
      composite_ray(s, target_planes.deltas, t, w);
      double z = 0.0;
      double mass = 0.0;
      for (int k = 0; k < kk; ++k) {
        z += w[k] * target_planes.depths[k];
        mass += w[k];
      }
      out.z(y, x) = opts.normalize ? z / (mass + opts.epsilon) : z;
      out.valid(y, x) = 1;
    }
  }
  return out;
}

/// Raw parameters whose rendering reproduces `depth` per pixel: vacuum in
/// front, a partially opaque plane just before the surface and an opaque
/// plane just behind it. Depths outside [z_1, z_K] snap to the end planes.
[[nodiscard]] inline Volume opaque_raw_from_depth(const Field& depth,
                                                  const PlaneSet& planes) {
  constexpr double kVacuum = -40.0;
  constexpr double kOpaqueTau = 40.0;
  const int kk = planes.size();
  Volume raw(kk, depth.height(), depth.width(), kVacuum);
  const std::size_t stride = raw.plane_size();
  for (std::size_t p = 0; p < stride; ++p) {
    const double d = depth[p];
    if (!(d > planes.depths.front())) {
      raw[p] = inverse_softplus(kOpaqueTau / planes.deltas[0]);
      continue;
    }
    if (d >= planes.depths.back()) {
      raw[(kk - 1) * stride + p] =
          inverse_softplus(kOpaqueTau / planes.deltas[kk - 1]);
      continue;
    }
    const auto it =
        std::upper_bound(planes.depths.begin(), planes.depths.end(), d);
    const int j = static_cast<int>(it - planes.depths.begin()) - 1;
    const double z0 = planes.depths[j];
    const double z1 = planes.depths[j + 1];
    const double alpha = (z1 - d) / (z1 - z0);
    const double sigma = -std::log1p(-alpha) / planes.deltas[j];
    raw[j * stride + p] = std::max(inverse_softplus(sigma), kVacuum);
    raw[(j + 1) * stride + p] =
        inverse_softplus(kOpaqueTau / planes.deltas[j + 1]);
  }
  return raw;
}

}  // namespace voldepth
