#pragma once

// Photometric, smoothness, depth-consistency and brightness terms of the
// training objective, each with its hand-written adjoint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"

namespace voldepth {

struct BrightnessParams {
  double a = 1.0;  // gain
  double b = 0.0;  // bias

  bool operator==(const BrightnessParams&) const = default;
};

struct LossWeights {
  double alpha = 1e-3;  // smoothness
  double beta = 0.01;   // depth consistency
  double eta = 0.01;    // brightness regularization

  void validate() const {
    for (double v : {alpha, beta, eta}) {
      if (!std::isfinite(v) || v < 0.0) {
        throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
      }
    }
  }
};

struct LossBreakdown {
  double photometric = 0.0;   // L_p
  double smoothness = 0.0;    // L_s
  double depth = 0.0;         // L_d
  double brightness = 0.0;    // L_r
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    photometric += o.photometric;
    smoothness += o.smoothness;
    depth += o.depth;
    brightness += o.brightness;
    total += o.total;
    return *this;
  }
  bool operator==(const LossBreakdown&) const = default;
};

/// total = L_p + alpha L_s + beta L_d + eta L_r
[[nodiscard]] inline LossBreakdown total_loss(double photometric,
                                              double smoothness, double depth,
                                              double brightness,
                                              const LossWeights& w) {
  return {photometric, smoothness, depth, brightness,
          photometric + w.alpha * smoothness + w.beta * depth +
              w.eta * brightness};
}

/// Frozen branch choices for |x| terms. While `frozen` is false the signs
/// seen are recorded; once frozen they are replayed so that repeated
/// evaluations stay on one smooth piece of the loss.
/// Residuals this close to zero count as zero: the subgradient of |r| there
/// is taken as 0 so that rounding noise in an exact fit carries no signal.
inline constexpr double kSignDeadband = 1e-12;

inline std::int8_t residual_sign(double x) {
  return (x > kSignDeadband) - (x < -kSignDeadband);
}

struct SignTape {
  std::vector<std::int8_t> signs;
  bool frozen = false;

  double sign(std::size_t i, double x) {
    if (frozen) return signs.at(i);
    if (signs.size() <= i) signs.resize(i + 1, 0);
    const std::int8_t s = residual_sign(x);
    signs[i] = s;
    return s;
  }
};

inline double tape_sign(SignTape* tape, std::size_t i, double x) {
  if (tape) return tape->sign(i, x);
  return residual_sign(x);
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

struct SsimConstants {
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mirror index for a one-pixel reflection pad.
[[nodiscard]] inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

namespace detail {

struct SsimMoments {
  double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
};

inline SsimMoments window_moments(std::span<const double> a,
                                  std::span<const double> b, int h, int w,
                                  int y, int x) {
  SsimMoments m;
  for (int dy = -1; dy <= 1; ++dy) {
    const int yy = reflect_index(y + dy, h);
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = reflect_index(x + dx, w);
      const double va = a[yy * w + xx];
      const double vb = b[yy * w + xx];
      m.mx += va;
      m.my += vb;
      m.xx += va * va;
      m.yy += vb * vb;
      m.xy += va * vb;
    }
  }
  m.mx /= 9.0;
  m.my /= 9.0;
  m.xx /= 9.0;
  m.yy /= 9.0;
  m.xy /= 9.0;
  return m;
}

}  // namespace detail

/// Per-pixel, per-channel structural similarity over 3x3 windows with
/// reflection padding.
[[nodiscard]] inline Grid<double> ssim_map(const Grid<double>& a,
                                           const Grid<double>& b,
                                           const SsimConstants& k = {}) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim_map: shape mismatch");
  const int h = a.height();
  const int w = a.width();
  Grid<double> out(a.channels(), h, w);
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.channel(c);
    const auto pb = b.channel(c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto m = detail::window_moments(pa, pb, h, w, y, x);
        const double vx = m.xx - m.mx * m.mx;
        const double vy = m.yy - m.my * m.my;
        const double cov = m.xy - m.mx * m.my;
        const double num = (2.0 * m.mx * m.my + k.c1) * (2.0 * cov + k.c2);
        const double den =
            (m.mx * m.mx + m.my * m.my + k.c1) * (vx + vy + k.c2);
        out(c, y, x) = num / den;
      }
    }
  }
  return out;
}

/// Gradient of sum(upstream * ssim_map(a, b)) with respect to b.
[[nodiscard]] inline Grid<double> ssim_backward_second(
    const Grid<double>& a, const Grid<double>& b, const Grid<double>& upstream,
    const SsimConstants& k = {}) {
  const int h = a.height();
  const int w = a.width();
  Grid<double> grad(a.channels(), h, w);
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.channel(c);
    const auto pb = b.channel(c);
    auto pg = grad.channel(c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double g = upstream(c, y, x);
        if (g == 0.0) continue;
        const auto m = detail::window_moments(pa, pb, h, w, y, x);
        const double l_num = 2.0 * m.mx * m.my + k.c1;
        const double s_num = 2.0 * (m.xy - m.mx * m.my) + k.c2;
        const double l_den = m.mx * m.mx + m.my * m.my + k.c1;
        const double s_den =
            (m.xx - m.mx * m.mx) + (m.yy - m.my * m.my) + k.c2;
        const double num = l_num * s_num;
        const double den = l_den * s_den;
        const double inv_den2 = 1.0 / (den * den);
        // Partials of num/den with respect to mean(b), mean(b^2), mean(ab).
        const double dnum_dmy = 2.0 * m.mx * s_num - 2.0 * m.mx * l_num;
        const double dden_dmy = 2.0 * m.my * s_den - 2.0 * m.my * l_den;
        const double d_my = (dnum_dmy * den - num * dden_dmy) * inv_den2;
        const double d_yy = -num * l_den * inv_den2;
        const double d_xy = 2.0 * l_num / den;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = reflect_index(y + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = reflect_index(x + dx, w);
            const std::size_t q = yy * w + xx;
            pg[q] += g / 9.0 * (d_my + 2.0 * pb[q] * d_yy + pa[q] * d_xy);
          }
        }
      }
    }
  }
  return grad;
}

/// Per-pixel 0.15 |a - b| + 0.85 (1 - SSIM(a, b)) / 2, averaged over channels.
[[nodiscard]] inline Field photometric_error_map(const Image& a, const Image& b,
                                                 const SsimConstants& k = {}) {
  const auto s = ssim_map(a, b, k);
  Field out(1, a.height(), a.width());
  const std::size_t stride = a.plane_size();
  for (std::size_t p = 0; p < stride; ++p) {
    double acc = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
      const std::size_t i = c * stride + p;
      acc += 0.15 * std::abs(a[i] - b[i]) + 0.85 * (1.0 - s[i]) / 2.0;
    }
    out[p] = acc / a.channels();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

struct TermResult {
  double value = 0.0;
  bool empty = false;  // no pixel contributed
};

/// 0.15 L1 + 0.85 (1 - SSIM) / 2 between the target and the brightness
/// corrected reconstruction, on pixels kept by both masks. SSIM is taken on
/// the masked images. Both parts are averaged over kept pixels and channels.
/// With `grad` set, receives d loss / d reconstruction.
[[nodiscard]] inline TermResult photometric_loss(
    const Image& target, const Image& reconstruction, const Mask& occlusion,
    const Mask& identity, Image* grad = nullptr, SignTape* tape = nullptr,
    const SsimConstants& k = {}) {
  if (!target.same_shape(reconstruction)) {
    throw std::invalid_argument("photometric_loss: image shape mismatch");
  }
  require_same_extent(target, occlusion, "photometric_loss");
  require_same_extent(target, identity, "photometric_loss");
  const Mask keep = mask_and(occlusion, identity);
  const std::size_t n = count_set(keep);
  if (grad) *grad = Image(target.channels(), target.height(), target.width());
  if (n == 0) return {0.0, true};

  const int nc = target.channels();
  const std::size_t stride = target.plane_size();
  const double norm = 1.0 / (static_cast<double>(n) * nc);
  Image mt(nc, target.height(), target.width());
  Image mr(nc, target.height(), target.width());
  for (int c = 0; c < nc; ++c) {
    for (std::size_t p = 0; p < stride; ++p) {
      if (!keep[p]) continue;
      mt[c * stride + p] = target[c * stride + p];
      mr[c * stride + p] = reconstruction[c * stride + p];
    }
  }
  const auto s = ssim_map(mt, mr, k);
  double l1 = 0.0;
  double dssim = 0.0;
  Grid<double> ds(nc, target.height(), target.width());
  for (int c = 0; c < nc; ++c) {
    for (std::size_t p = 0; p < stride; ++p) {
      if (!keep[p]) continue;
      const std::size_t i = c * stride + p;
      const double diff = reconstruction[i] - target[i];
      const double sg = tape_sign(tape, i, diff);
      l1 += sg * diff;
      dssim += (1.0 - s[i]) / 2.0;
      if (grad) {
        (*grad)[i] += 0.15 * norm * sg;
        ds[i] = -0.85 * norm / 2.0;
      }
    }
  }
  if (grad) {
    const auto g = ssim_backward_second(mt, mr, ds, k);
    for (int c = 0; c < nc; ++c) {
      for (std::size_t p = 0; p < stride; ++p) {
        if (keep[p]) (*grad)[c * stride + p] += g[c * stride + p];
      }
    }
  }
  return {0.15 * l1 * norm + 0.85 * dssim * norm, false};
}

enum class SmoothnessTarget {
  disparity,  // normalize 1/Z by its mean
  depth,      // normalize Z by its mean
};

/// Edge-aware first-order smoothness of the mean-normalized disparity (or
/// depth): mean |dx d*| exp(-|dx I|) + mean |dy d*| exp(-|dy I|) with forward
/// differences and channel-averaged image gradients. Pixels with invalid or
/// non-positive depth drop out of both the normalization and the differences.
/// With `grad` set, receives d loss / d depth.
[[nodiscard]] inline TermResult smoothness_loss(
    const DepthMap& depth, const Image& image,
    SmoothnessTarget target = SmoothnessTarget::disparity,
    Field* grad = nullptr, SignTape* tape = nullptr) {
  require_same_extent(depth.z, image, "smoothness_loss");
  const int h = depth.height();
  const int w = depth.width();
  const std::size_t stride = depth.z.plane_size();
  if (grad) *grad = Field(1, h, w);

  std::vector<double> d(stride, 0.0);
  std::vector<std::uint8_t> ok(stride, 0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < stride; ++p) {
    const double z = depth.z[p];
    if (!depth.valid[p] || !(z > 0.0)) continue;
    ok[p] = 1;
    d[p] = target == SmoothnessTarget::disparity ? 1.0 / z : z;
    sum += d[p];
    ++count;
  }
  if (count == 0) return {0.0, true};
  const double mean = sum / count;

  auto image_edge = [&](std::size_t p, std::size_t q) {
    double acc = 0.0;
    for (int c = 0; c < image.channels(); ++c) {
      acc += std::abs(image[c * stride + q] - image[c * stride + p]);
    }
    return std::exp(-acc / image.channels());
  };

  // d loss / d (d_p / mean)
  std::vector<double> g_norm(stride, 0.0);
  std::vector<double> g_axis(stride);
  double total = 0.0;
  bool any = false;
  for (int axis = 0; axis < 2; ++axis) {
    std::fill(g_axis.begin(), g_axis.end(), 0.0);
    double acc = 0.0;
    std::size_t pairs = 0;
    for (int y = 0; y + (axis == 1) < h; ++y) {
      for (int x = 0; x + (axis == 0) < w; ++x) {
        const std::size_t p = y * w + x;
        const std::size_t q = axis == 0 ? p + 1 : p + w;
        if (!ok[p] || !ok[q]) continue;
        const double diff = (d[q] - d[p]) / mean;
        const double s = tape_sign(tape, 2 * p + axis, diff);
        const double e = image_edge(p, q);
        acc += s * diff * e;
        ++pairs;
        g_axis[q] += s * e;
        g_axis[p] -= s * e;
      }
    }
    if (pairs == 0) continue;
    any = true;
    total += acc / pairs;
    for (std::size_t p = 0; p < stride; ++p) g_norm[p] += g_axis[p] / pairs;
  }
  if (!any) return {0.0, true};

  if (grad) {
    // n_j = d_j / mean, mean = sum(d) / count
    double dot = 0.0;
    for (std::size_t p = 0; p < stride; ++p) dot += g_norm[p] * d[p];
    for (std::size_t p = 0; p < stride; ++p) {
      if (!ok[p]) continue;
      const double gd = g_norm[p] / mean - dot / (mean * mean * count);
      const double z = depth.z[p];
      (*grad)[p] = target == SmoothnessTarget::disparity ? -gd / (z * z) : gd;
    }
  }
  return {total, false};
}

/// Pixels entering the depth-consistency average: kept by the occlusion mask,
/// valid in both depth maps, and with a positive depth sum.
[[nodiscard]] inline Mask depth_consistency_support(const DepthMap& cross,
                                                    const DepthMap& target,
                                                    const Mask& occlusion,
                                                    double eps = 1e-6) {
  require_same_extent(cross.z, target.z, "depth_consistency_loss");
  require_same_extent(cross.z, occlusion, "depth_consistency_loss");
  Mask out(1, cross.height(), cross.width());
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = occlusion[p] && cross.valid[p] && target.valid[p] &&
             cross.z[p] + target.z[p] > eps;
  }
  return out;
}

/// (1/M') sum |Z_cross - Z_t| / (Z_cross + Z_t) over `support`.
/// Gradients with respect to both depth maps are optional.
[[nodiscard]] inline TermResult depth_consistency_loss(
    const DepthMap& cross, const DepthMap& target, const Mask& support,
    Field* grad_cross = nullptr, Field* grad_target = nullptr,
    SignTape* tape = nullptr) {
  const std::size_t stride = cross.z.plane_size();
  if (grad_cross) *grad_cross = Field(1, cross.height(), cross.width());
  if (grad_target) *grad_target = Field(1, cross.height(), cross.width());
  const std::size_t n = count_set(support);
  if (n == 0) return {0.0, true};
  double acc = 0.0;
  for (std::size_t p = 0; p < stride; ++p) {
    if (!support[p]) continue;
    const double a = cross.z[p];
    const double b = target.z[p];
    const double s = tape_sign(tape, p, a - b);
    const double sum = a + b;
    acc += s * (a - b) / sum;
    const double inv2 = 1.0 / (sum * sum * n);
    if (grad_cross) (*grad_cross)[p] = s * 2.0 * b * inv2;
    if (grad_target) (*grad_target)[p] = -s * 2.0 * a * inv2;
  }
  return {acc / n, false};
}

[[nodiscard]] inline TermResult depth_consistency_loss(const DepthMap& cross,
                                                       const DepthMap& target,
                                                       const Mask& occlusion,
                                                       double eps) {
  return depth_consistency_loss(
      cross, target, depth_consistency_support(cross, target, occlusion, eps));
}

/// (a - 1)^2 + b^2 and its gradient (2(a - 1), 2b).
[[nodiscard]] inline double brightness_reg_loss(const BrightnessParams& p,
                                                Vec2* grad = nullptr) {
  if (grad) *grad = {2.0 * (p.a - 1.0), 2.0 * p.b};
  return (p.a - 1.0) * (p.a - 1.0) + p.b * p.b;
}

}  // namespace voldepth
