#pragma once

// Depth error metrics and pose error.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/geometry.hpp"

namespace voldepth {

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t pixels = 0;

  bool operator==(const DepthMetrics&) const = default;
};

struct MetricOptions {
  double min_depth = 0.1;
  double max_depth = 80.0;
  /// Rescale the prediction by median(gt) / median(pred) first.
  bool median_scale = true;
};

/// Median of `v` (the mean of the two middle values for even sizes).
[[nodiscard]] inline double median(std::vector<double> v) {
  if (v.empty()) throw std::domain_error("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lower + upper);
}

/// Metrics over pixels valid in both maps with positive ground truth.
/// Sq Rel and RMSE use squared differences.
[[nodiscard]] inline DepthMetrics depth_metrics(const DepthMap& pred,
                                                const DepthMap& gt,
                                                const MetricOptions& opt = {}) {
  require_same_extent(pred.z, gt.z, "depth_metrics");
  if (!(opt.min_depth > 0.0) || !(opt.max_depth > opt.min_depth)) {
    throw std::invalid_argument("depth_metrics: need 0 < min_depth < max_depth");
  }
  std::vector<double> p, g;
  for (std::size_t i = 0; i < gt.z.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i] || !(gt.z[i] > 0.0)) continue;
    if (!std::isfinite(pred.z[i])) continue;
    p.push_back(pred.z[i]);
    g.push_back(gt.z[i]);
  }
  if (p.empty()) throw std::domain_error("depth_metrics: no jointly valid pixel");

  double scale = 1.0;
  if (opt.median_scale) {
    const double mp = median(p);
    if (!(mp > 0.0)) {
      throw std::domain_error("depth_metrics: prediction median is not positive");
    }
    scale = median(g) / mp;
  }

  DepthMetrics m;
  m.pixels = p.size();
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double z = std::clamp(p[i] * scale, opt.min_depth, opt.max_depth);
    const double t = g[i];
    const double diff = z - t;
    m.abs_rel += std::abs(diff) / t;
    m.sq_rel += diff * diff / t;
    m.rmse += diff * diff;
    const double ld = std::log(z) - std::log(t);
    m.rmse_log += ld * ld;
    const double ratio = std::max(z / t, t / z);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(p.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 = d1 / n;
  m.delta2 = d2 / n;
  m.delta3 = d3 / n;
  return m;
}

struct PoseError {
  double translation = 0.0;  // scene units
  double rotation_deg = 0.0;
};

/// Geodesic angle of R_a R_b^T in radians.
[[nodiscard]] inline double rotation_angle(const Mat3& a, const Mat3& b) {
  const Mat3 r = a * b.transpose();
  // atan2 of (|axis part|, cos part) stays accurate near 0 and pi.
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), 0.5 * (r.trace() - 1.0));
}

[[nodiscard]] inline PoseError pose_error(const RigidTransform& pred,
                                          const RigidTransform& gt) {
  constexpr double kDeg = 57.29577951308232;
  return {(pred.translation - gt.translation).norm(),
          rotation_angle(pred.rotation, gt.rotation) * kDeg};
}

inline const char* metrics_csv_header() {
  return "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";
}

inline void write_metrics_csv(std::ostream& os, const DepthMetrics& m) {
  os << m.abs_rel << ',' << m.sq_rel << ',' << m.rmse << ',' << m.rmse_log
     << ',' << m.delta1 << ',' << m.delta2 << ',' << m.delta3;
}

}  // namespace voldepth
