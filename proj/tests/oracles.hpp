#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library code it is meant to check.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "voldepth/voldepth.hpp"

namespace oracle {

using voldepth::Mat3;
using voldepth::Mat4;
using voldepth::Vec3;
using voldepth::Vec6;

using Real50 = boost::multiprecision::cpp_dec_float_50;

/// exp of the 4x4 twist matrix by its power series.
inline Mat4 se3_exp_series(const Vec6& xi, int terms = 40) {
  Mat4 x = Mat4::Zero();
  x(0, 1) = -xi(2);
  x(0, 2) = xi(1);
  x(1, 0) = xi(2);
  x(1, 2) = -xi(0);
  x(2, 0) = -xi(1);
  x(2, 1) = xi(0);
  x.topRightCorner<3, 1>() = xi.tail<3>();
  Mat4 term = Mat4::Identity();
  Mat4 sum = Mat4::Identity();
  for (int n = 1; n < terms; ++n) {
    term = term * x / n;
    sum += term;
  }
  return sum;
}

struct RayReference {
  std::vector<double> transmittance;
  std::vector<double> weights;
  double depth = 0.0;
};

/// Transmittance as a product of per-interval survival probabilities and
/// weights as T_k - T_{k+1}, in 50-digit arithmetic.
inline RayReference composite_direct(const std::vector<double>& sigma,
                                     const std::vector<double>& delta,
                                     const std::vector<double>& depths) {
  RayReference out;
  Real50 t = 1;
  Real50 z = 0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const Real50 survive = exp(-Real50(sigma[k]) * Real50(delta[k]));
    const Real50 next = t * survive;
    const Real50 w = t - next;
    out.transmittance.push_back(static_cast<double>(t));
    out.weights.push_back(static_cast<double>(w));
    z += w * Real50(depths[k]);
    t = next;
  }
  out.depth = static_cast<double>(z);
  return out;
}

/// SSIM at one pixel from an explicit 3x3 window with mirrored borders.
inline double ssim_pixel(const voldepth::Grid<double>& a,
                         const voldepth::Grid<double>& b, int c, int y, int x,
                         double c1 = 1e-4, double c2 = 9e-4) {
  const int h = a.height(), w = a.width();
  auto mirror = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  std::vector<double> va, vb;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      va.push_back(a(c, mirror(y + dy, h), mirror(x + dx, w)));
      vb.push_back(b(c, mirror(y + dy, h), mirror(x + dx, w)));
    }
  }
  double ma = 0, mb = 0;
  for (int i = 0; i < 9; ++i) {
    ma += va[i] / 9;
    mb += vb[i] / 9;
  }
  double saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < 9; ++i) {
    saa += (va[i] - ma) * (va[i] - ma) / 9;
    sbb += (vb[i] - mb) * (vb[i] - mb) / 9;
    sab += (va[i] - ma) * (vb[i] - mb) / 9;
  }
  return (2 * ma * mb + c1) * (2 * sab + c2) /
         ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
}

/// Bilinear interpolation written out from the four corners, clamping the
/// far corner at the last row/column.
inline double bilinear(const voldepth::Grid<double>& g, int c, double x,
                       double y) {
  const int w = g.width(), h = g.height();
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * g(c, y0, x0) + fx * (1 - fy) * g(c, y0, x1) +
         (1 - fx) * fy * g(c, y1, x0) + fx * fy * g(c, y1, x1);
}

/// Source density at a source-frame point: bilinear in each plane, then
/// linear between the bracketing planes, constant past the end planes.
/// Returns NaN outside the frustum.
inline double density_at(const voldepth::Volume& sigma,
                         const std::vector<double>& depths, double z_min,
                         double z_max, const voldepth::Intrinsics& k,
                         const Vec3& p) {
  if (!(p.z() > 0) || p.z() < z_min || p.z() > z_max) return NAN;
  const double x = k.fx * p.x() / p.z() + k.cx;
  const double y = k.fy * p.y() / p.z() + k.cy;
  const double slack = 1e-9;
  if (x < -slack || y < -slack || x > k.width - 1 + slack ||
      y > k.height - 1 + slack) {
    return NAN;
  }
  const double xc = std::clamp(x, 0.0, k.width - 1.0);
  const double yc = std::clamp(y, 0.0, k.height - 1.0);
  const int kk = static_cast<int>(depths.size());
  if (p.z() <= depths.front()) return bilinear(sigma, 0, xc, yc);
  if (p.z() >= depths.back()) return bilinear(sigma, kk - 1, xc, yc);
  int j = 0;
  while (depths[j + 1] <= p.z()) ++j;
  const double f = (p.z() - depths[j]) / (depths[j + 1] - depths[j]);
  return (1 - f) * bilinear(sigma, j, xc, yc) + f * bilinear(sigma, j + 1, xc, yc);
}

/// Metrics written straight from their definitions, no median scaling.
struct Metrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, d1 = 0, d2 = 0, d3 = 0;
};

inline Metrics metrics(const std::vector<double>& pred,
                       const std::vector<double>& gt) {
  Metrics m;
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - gt[i];
    m.abs_rel += std::abs(e) / gt[i] / n;
    m.sq_rel += e * e / gt[i] / n;
    m.rmse += e * e / n;
    m.rmse_log += std::pow(std::log(pred[i] / gt[i]), 2) / n;
    const double r = std::max(pred[i] / gt[i], gt[i] / pred[i]);
    m.d1 += (r < 1.25) / n;
    m.d2 += (r < 1.5625) / n;
    m.d3 += (r < 1.953125) / n;
  }
  m.rmse = std::sqrt(m.rmse);
  m.rmse_log = std::sqrt(m.rmse_log);
  return m;
}

/// Rotation angle from the unit quaternion Eigen extracts.
inline double quaternion_angle(const Mat3& a, const Mat3& b) {
  Eigen::Quaterniond q(a * b.transpose());
  q.normalize();
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

inline voldepth::Volume random_volume(int k, int h, int w, std::mt19937_64& rng,
                                      double lo, double hi) {
  voldepth::Volume v(k, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : v.values()) x = u(rng);
  return v;
}

}  // namespace oracle
