#pragma once

// Loss and reverse-mode gradients over the fixed pipeline
//
//   raw density -> softplus -> compositing -> depth -> warp -> bilinear sample
//   -> brightness -> photometric / smoothness / depth-consistency terms.
//
// Masks and stochastic plane positions are constants of a step. A StepContext
// carries them, together with the discrete branch choices made by the forward
// pass (sampling cells, signs of absolute values), so that the same step can
// be re-evaluated on one smooth piece of the objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/frame.hpp"
#include "voldepth/geometry.hpp"
#include "voldepth/losses.hpp"
#include "voldepth/regularization.hpp"
#include "voldepth/rendering.hpp"

namespace voldepth {

/// Raised when an intermediate quantity stops being finite.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string stage, const std::string& detail)
      : std::runtime_error("non-finite value in " + stage + ": " + detail),
        stage_(std::move(stage)) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PlaneConfig {
  int count = 24;
  double z_min = 1.0;
  double z_max = 6.0;
  PlaneSampling sampling = PlaneSampling::stratified;

  void validate() const {
    if (count < 1) throw std::invalid_argument("planes: count must be >= 1");
    if (!(z_min > 0.0) || !(z_max > z_min)) {
      throw std::invalid_argument("planes: need 0 < z_min < z_max");
    }
  }
};

struct TermSwitches {
  bool photometric = true;
  bool smoothness = true;
  bool depth = true;
  bool brightness = true;
};

struct LossConfig {
  PlaneConfig planes;
  LossWeights weights;
  /// Occlusion threshold in scene units; non-positive selects
  /// 1% of (z_max - z_min).
  double gamma = 0.0;
  bool use_occlusion_mask = true;
  bool use_identity_mask = true;
  /// Also evaluate the pair with source and target swapped.
  bool bidirectional = true;
  SmoothnessTarget smoothness = SmoothnessTarget::disparity;
  RenderOptions render;
  SsimConstants ssim;
  TermSwitches terms;

  [[nodiscard]] double occlusion_threshold() const {
    return gamma > 0.0 ? gamma : 0.01 * (planes.z_max - planes.z_min);
  }
  [[nodiscard]] bool cross_depth_enabled() const {
    return terms.depth && weights.beta > 0.0;
  }
};

/// Free parameters of one pair. The pose is a point on SE(3); gradients for it
/// are taken with respect to a left increment exp(xi) * pose_ts at xi = 0.
struct ParamSet {
  Volume raw_t;
  Volume raw_s;
  RigidTransform pose_ts;
  BrightnessParams brightness_st;  // corrects the source warped into target
  BrightnessParams brightness_ts;  // corrects the target warped into source
};

struct GradSet {
  Volume raw_t;
  Volume raw_s;
  Vec6 twist = Vec6::Zero();  // (omega, v)
  Vec2 brightness_st = Vec2::Zero();
  Vec2 brightness_ts = Vec2::Zero();

  static GradSet zeros_like(const ParamSet& p) {
    GradSet g;
    g.raw_t = Volume(p.raw_t.channels(), p.raw_t.height(), p.raw_t.width());
    g.raw_s = Volume(p.raw_s.channels(), p.raw_s.height(), p.raw_s.width());
    return g;
  }
};

/// Constants of one direction (target <- source) within a step.
struct DirectionTape {
  bool masks_ready = false;
  /// Store sampling cells during the next evaluation so they can be frozen.
  bool record_branches = false;
  bool branches_frozen = false;
  Mask occlusion;       // M_o, already restricted to warpable pixels
  Mask identity;        // M_i
  Mask depth_support;   // pixels averaged by the depth-consistency term
  std::vector<BilinearCell> warp_cells;
  std::vector<VolumeLocation> cross_locations;  // K per pixel, plane-major
  SignTape photometric_signs;
  SignTape smoothness_signs;
  SignTape depth_signs;

  void freeze_branches() {
    branches_frozen = true;
    photometric_signs.frozen = true;
    smoothness_signs.frozen = true;
    depth_signs.frozen = true;
  }
};

struct StepContext {
  PlaneSet planes_t;
  PlaneSet planes_s;
  DirectionTape forward;   // target = t, source = s
  DirectionTape backward;  // target = s, source = t
  std::size_t cross_queries = 0;  // density lookups into the other frame
};

[[nodiscard]] inline StepContext make_step(const LossConfig& cfg,
                                           std::mt19937_64& rng) {
  cfg.planes.validate();
  StepContext ctx;
  // One draw per step serves both frames, so identical frames stay identical.
  ctx.planes_t = sample_planes(cfg.planes.count, cfg.planes.z_min,
                               cfg.planes.z_max, cfg.planes.sampling, rng);
  ctx.planes_s = ctx.planes_t;
  return ctx;
}

namespace detail {

template <typename G>
void require_finite(const G& grid, const char* stage) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) {
      throw NumericalError(stage, "entry " + std::to_string(i) + " = " +
                                      std::to_string(grid[i]));
    }
  }
}

inline void require_finite(double v, const char* stage) {
  if (!std::isfinite(v)) throw NumericalError(stage, std::to_string(v));
}

struct DirectionView {
  const Volume& raw_tgt;
  const Volume& raw_src;
  const Volume& sigma_tgt;
  const Volume& sigma_src;
  const PlaneSet& planes_tgt;
  const PlaneSet& planes_src;
  const Image& img_tgt;
  const Image& img_src;
  const Intrinsics& k;
  const RigidTransform& tgt_to_src;
  const BrightnessParams& brightness;
};

struct DirectionGrad {
  Volume sigma_tgt;  // d loss / d activated density
  Volume sigma_src;
  Vec6 twist = Vec6::Zero();  // left increment of tgt_to_src
  Vec2 brightness = Vec2::Zero();
};

/// Adds g_q . dq/dxi for q = exp(xi) q0 at xi = 0, i.e. (q x g, g).
inline void accumulate_twist(Vec6& twist, const Vec3& q, const Vec3& g) {
  twist.head<3>() += q.cross(g);
  twist.tail<3>() += g;
}

/// d loss / d depth -> d loss / d sigma along every ray of a rendered volume.
inline void depth_backward(const Volume& sigma, const RenderWeights& rw,
                           const PlaneSet& planes, const RenderOptions& opts,
                           const Field& dz, Volume& dsigma) {
  const int kk = sigma.channels();
  const std::size_t stride = sigma.plane_size();
  std::vector<double> s(kk), t(kk), w(kk), ds(kk);
  const std::vector<double> ones(kk, 1.0);
  for (std::size_t p = 0; p < stride; ++p) {
    if (dz[p] == 0.0) continue;
    for (int k = 0; k < kk; ++k) {
      s[k] = sigma[k * stride + p];
      t[k] = rw.transmittance[k * stride + p];
      w[k] = rw.weights[k * stride + p];
      ds[k] = 0.0;
    }
    if (opts.normalize) {
      double num = 0.0, mass = 0.0;
      for (int k = 0; k < kk; ++k) {
        num += w[k] * planes.depths[k];
        mass += w[k];
      }
      const double den = mass + opts.epsilon;
      composite_ray_backward(s, planes.deltas, t, w, planes.depths,
                             dz[p] / den, ds);
      composite_ray_backward(s, planes.deltas, t, w, ones,
                             -dz[p] * num / (den * den), ds);
    } else {
      composite_ray_backward(s, planes.deltas, t, w, planes.depths, dz[p], ds);
    }
    for (int k = 0; k < kk; ++k) dsigma[k * stride + p] += ds[k];
  }
}

inline LossBreakdown evaluate_direction(const DirectionView& in,
                                        const LossConfig& cfg,
                                        DirectionTape& tape,
                                        DirectionGrad* grad,
                                        std::size_t& cross_queries) {
  const int h = in.img_tgt.height();
  const int w = in.img_tgt.width();
  const int nc = in.img_tgt.channels();
  const std::size_t stride = static_cast<std::size_t>(h) * w;
  const int kk = in.planes_tgt.size();
  const Intrinsics& k = in.k;
  const Mat3& rot = in.tgt_to_src.rotation;
  const bool replay = tape.branches_frozen;
  const bool record = !replay && tape.record_branches;

  // Target depth.
  const Volume& sigma_t = in.sigma_tgt;
  const RenderWeights rw_t = compute_weights(sigma_t, in.planes_tgt);
  const DepthMap depth_t = render_depth(rw_t, in.planes_tgt, cfg.render);
  require_finite(depth_t.z, "target depth rendering");

  // Warp the source image into the target view.
  if (record) tape.warp_cells.assign(stride, BilinearCell{});
  std::vector<Vec3> q_pts(stride, Vec3::Zero());
  Mask warp_ok(1, h, w, 0);
  Image warped(nc, h, w);
  Image warped_dx(nc, h, w);
  Image warped_dy(nc, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const double z = depth_t.z[p];
      if (!(z > 0.0)) continue;
      const Vec3 q = in.tgt_to_src.apply(z * pixel_ray(x, y, k));
      q_pts[p] = q;
      const auto proj = project(q, k);
      BilinearCell cell;
      if (replay) {
        cell = tape.warp_cells[p];
      } else {
        if (proj.in_front) {
          cell = locate_cell(proj.pixel.x(), proj.pixel.y(), w, h);
        }
        if (record) tape.warp_cells[p] = cell;
      }
      if (!cell.valid || !proj.in_front) continue;
      warp_ok[p] = 1;
      for (int c = 0; c < nc; ++c) {
        const auto v = interpolate_in_cell(in.img_src.channel(c), w, h, cell,
                                           proj.pixel.x(), proj.pixel.y());
        warped(c, y, x) = v.value;
        warped_dx(c, y, x) = v.dx;
        warped_dy(c, y, x) = v.dy;
      }
    }
  }
  require_finite(warped, "source warping");

  if (!tape.masks_ready) {
    if (cfg.use_occlusion_mask) {
      const PlaneSet mid = midpoint_planes(in.planes_src.size(),
                                           in.planes_src.z_min,
                                           in.planes_src.z_max);
      const DepthMap depth_s =
          render_depth(compute_weights(in.sigma_src, mid), mid, cfg.render);
      tape.occlusion =
          mask_and(occlusion_mask(depth_t, depth_s, in.tgt_to_src, k, k,
                                  cfg.occlusion_threshold()),
                   warp_ok);
    } else {
      tape.occlusion = warp_ok;
    }
    tape.identity = cfg.use_identity_mask
                        ? identity_mask(in.img_tgt, in.img_src, warped, cfg.ssim)
                        : Mask(1, h, w, 1);
  }
  // A frozen mask may name a pixel that no longer warps; drop it.
  const Mask occlusion = mask_and(tape.occlusion, warp_ok);

  const BrightnessParams& br = in.brightness;
  const Image corrected = apply_brightness(warped, br);

  Field dz_t(1, h, w);  // d loss / d target depth
  double lp = 0.0, ls = 0.0, ld = 0.0, lr = 0.0;

  if (cfg.terms.photometric) {
    Image d_corrected;
    const auto res = photometric_loss(in.img_tgt, corrected, occlusion,
                                      tape.identity,
                                      grad ? &d_corrected : nullptr,
                                      &tape.photometric_signs, cfg.ssim);
    lp = res.value;
    require_finite(lp, "photometric loss");
    if (grad && !res.empty) {
      for (std::size_t p = 0; p < stride; ++p) {
        if (!occlusion[p] || !tape.identity[p]) continue;
        Vec2 d_pixel = Vec2::Zero();
        for (int c = 0; c < nc; ++c) {
          const double g = d_corrected[c * stride + p];
          grad->brightness.x() += g * warped[c * stride + p];
          grad->brightness.y() += g;
          const double gw = g * br.a;
          d_pixel.x() += gw * warped_dx[c * stride + p];
          d_pixel.y() += gw * warped_dy[c * stride + p];
        }
        const Vec3& q = q_pts[p];
        const Vec3 g_q = projection_jacobian(q, k).transpose() * d_pixel;
        accumulate_twist(grad->twist, q, g_q);
        const int y = static_cast<int>(p / w);
        const int x = static_cast<int>(p % w);
        dz_t[p] += g_q.dot(rot * pixel_ray(x, y, k));
      }
    }
  }

  if (cfg.terms.smoothness) {
    Field d_smooth;
    const auto res = smoothness_loss(depth_t, in.img_tgt, cfg.smoothness,
                                     grad ? &d_smooth : nullptr,
                                     &tape.smoothness_signs);
    ls = res.value;
    require_finite(ls, "smoothness loss");
    if (grad && !res.empty) {
      for (std::size_t p = 0; p < stride; ++p) {
        dz_t[p] += cfg.weights.alpha * d_smooth[p];
      }
    }
  }

  Volume dsigma_src;
  if (grad) dsigma_src = Volume(in.raw_src.channels(), h, w);

  if (cfg.cross_depth_enabled()) {
    const Volume& sigma_src = in.sigma_src;
    if (record) tape.cross_locations.assign(stride * kk, VolumeLocation{});
    Volume samples(kk, h, w), cross_t(kk, h, w), cross_w(kk, h, w);
    DepthMap cross(h, w);
    std::vector<double> s(kk), t(kk), wt(kk);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const Vec3 ray = pixel_ray(x, y, k);
        bool valid = true;
        for (int i = 0; i < kk; ++i) {
          const Vec3 q = in.tgt_to_src.apply(in.planes_tgt.depths[i] * ray);
          VolumeLocation loc;
          if (replay) {
            loc = tape.cross_locations[i * stride + p];
            const auto proj = project(q, k);
            loc.pixel = proj.pixel;
            if (!proj.in_front) loc.valid = false;
          } else {
            loc = locate_in_volume(q, in.planes_src, k);
            if (record) tape.cross_locations[i * stride + p] = loc;
          }
          ++cross_queries;
          if (!loc.valid) {
            valid = false;
            break;
          }
          s[i] = trilinear_at(sigma_src, in.planes_src, loc, q.z()).value;
          samples(i, y, x) = s[i];
        }
        if (!valid) continue;
        composite_ray(s, in.planes_tgt.deltas, t, wt);
        double z = 0.0, mass = 0.0;
        for (int i = 0; i < kk; ++i) {
          z += wt[i] * in.planes_tgt.depths[i];
          mass += wt[i];
          cross_t(i, y, x) = t[i];
          cross_w(i, y, x) = wt[i];
        }
        cross.z[p] = cfg.render.normalize ? z / (mass + cfg.render.epsilon) : z;
        cross.valid[p] = 1;
      }
    }
    require_finite(cross.z, "cross-frame depth rendering");
    if (!tape.masks_ready) {
      tape.depth_support = depth_consistency_support(cross, depth_t,
                                                     tape.occlusion);
    }
    const Mask support = mask_and(tape.depth_support, cross.valid);
    Field d_cross, d_target;
    const auto res = depth_consistency_loss(
        cross, depth_t, support, grad ? &d_cross : nullptr,
        grad ? &d_target : nullptr, &tape.depth_signs);
    ld = res.value;
    require_finite(ld, "depth consistency loss");
    if (grad && !res.empty) {
      const double beta = cfg.weights.beta;
      std::vector<double> ds(kk);
      const std::vector<double> ones(kk, 1.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          if (!support[p]) continue;
          dz_t[p] += beta * d_target[p];
          const double up = beta * d_cross[p];
          for (int i = 0; i < kk; ++i) {
            s[i] = samples(i, y, x);
            t[i] = cross_t(i, y, x);
            wt[i] = cross_w(i, y, x);
            ds[i] = 0.0;
          }
          if (cfg.render.normalize) {
            double num = 0.0, mass = 0.0;
            for (int i = 0; i < kk; ++i) {
              num += wt[i] * in.planes_tgt.depths[i];
              mass += wt[i];
            }
            const double den = mass + cfg.render.epsilon;
            composite_ray_backward(s, in.planes_tgt.deltas, t, wt,
                                   in.planes_tgt.depths, up / den, ds);
            composite_ray_backward(s, in.planes_tgt.deltas, t, wt, ones,
                                   -up * num / (den * den), ds);
          } else {
            composite_ray_backward(s, in.planes_tgt.deltas, t, wt,
                                   in.planes_tgt.depths, up, ds);
          }
          const Vec3 ray = pixel_ray(x, y, k);
          for (int i = 0; i < kk; ++i) {
            if (ds[i] == 0.0) continue;
            const Vec3 q = in.tgt_to_src.apply(in.planes_tgt.depths[i] * ray);
            VolumeLocation loc;
            if (replay) {
              loc = tape.cross_locations[i * stride + p];
              loc.pixel = project(q, k).pixel;
            } else {
              loc = locate_in_volume(q, in.planes_src, k);
            }
            trilinear_scatter(dsigma_src, in.planes_src, loc, q.z(), ds[i]);
            const auto tv = trilinear_at(sigma_src, in.planes_src, loc, q.z());
            const Vec2 d_pixel(ds[i] * tv.dx, ds[i] * tv.dy);
            Vec3 g_q = projection_jacobian(q, k).transpose() * d_pixel;
            g_q.z() += ds[i] * tv.dz;
            accumulate_twist(grad->twist, q, g_q);
          }
        }
      }
    }
  }

  if (cfg.terms.brightness) {
    Vec2 gb;
    lr = brightness_reg_loss(br, &gb);
    if (grad) grad->brightness += cfg.weights.eta * gb;
  }

  if (grad) {
    grad->sigma_tgt = Volume(kk, h, w);
    depth_backward(sigma_t, rw_t, in.planes_tgt, cfg.render, dz_t,
                   grad->sigma_tgt);
    grad->sigma_src = std::move(dsigma_src);
    require_finite(grad->sigma_tgt, "backward pass");
    require_finite(grad->sigma_src, "backward pass");
    for (int i = 0; i < 6; ++i) require_finite(grad->twist[i], "backward pass");
  }

  tape.masks_ready = true;
  return total_loss(lp, ls, ld, lr, cfg.weights);
}

}  // namespace detail

inline void validate_shapes(const ParamSet& params, const FramePair& pair,
                            const LossConfig& cfg) {
  const int h = pair.height();
  const int w = pair.width();
  if (pair.target.channels() != 3 || !pair.target.same_shape(pair.source)) {
    throw std::invalid_argument("frame pair: images must be 3 x H x W and equal");
  }
  for (const Volume* v : {&params.raw_t, &params.raw_s}) {
    if (v->channels() != cfg.planes.count || v->height() != h ||
        v->width() != w) {
      throw std::invalid_argument(
          "params: density grid must be K x H x W = " +
          std::to_string(cfg.planes.count) + " x " + std::to_string(h) + " x " +
          std::to_string(w));
    }
  }
  if (pair.intrinsics.width != w || pair.intrinsics.height != h) {
    throw std::invalid_argument("intrinsics: size does not match images");
  }
}

/// Evaluates the objective for one step. The first call on a context fixes
/// its masks; later calls reuse them. With `grads` set, also returns the
/// gradient of the total with respect to every free parameter.
inline LossBreakdown evaluate(const ParamSet& params, const FramePair& pair,
                              const LossConfig& cfg, StepContext& ctx,
                              GradSet* grads = nullptr) {
  validate_shapes(params, pair, cfg);
  const Intrinsics& k = pair.intrinsics;
  const Volume sigma_t = activate_density(params.raw_t);
  const Volume sigma_s = activate_density(params.raw_s);
  detail::DirectionGrad fwd_grad;
  const detail::DirectionView fwd{params.raw_t,  params.raw_s, sigma_t, sigma_s, ctx.planes_t,
                                  ctx.planes_s,  pair.target,  pair.source,
                                  k,             params.pose_ts,
                                  params.brightness_st};
  LossBreakdown out = detail::evaluate_direction(
      fwd, cfg, ctx.forward, grads ? &fwd_grad : nullptr, ctx.cross_queries);
  if (grads) {
    *grads = GradSet::zeros_like(params);
    grads->raw_t = std::move(fwd_grad.sigma_tgt);
    grads->raw_s = std::move(fwd_grad.sigma_src);
    grads->twist = fwd_grad.twist;
    grads->brightness_st = fwd_grad.brightness;
  }
  if (cfg.bidirectional) {
    const RigidTransform pose_st = inverse(params.pose_ts);
    detail::DirectionGrad bwd_grad;
    const detail::DirectionView bwd{params.raw_s,  params.raw_t, sigma_s, sigma_t, ctx.planes_s,
                                    ctx.planes_t,  pair.source,  pair.target,
                                    k,             pose_st,
                                    params.brightness_ts};
    out += detail::evaluate_direction(bwd, cfg, ctx.backward,
                                      grads ? &bwd_grad : nullptr,
                                      ctx.cross_queries);
    if (grads) {
      for (std::size_t i = 0; i < grads->raw_t.size(); ++i) {
        grads->raw_t[i] += bwd_grad.sigma_src[i];
        grads->raw_s[i] += bwd_grad.sigma_tgt[i];
      }
      // exp(xi) T_ts inverts to exp(-Ad(T_st) xi) T_st.
      grads->twist -= adjoint(pose_st).transpose() * bwd_grad.twist;
      grads->brightness_ts = bwd_grad.brightness;
    }
  }
  if (grads) {
    // Chain through the activation once per frame.
    for (std::size_t i = 0; i < grads->raw_t.size(); ++i) {
      grads->raw_t[i] *= softplus_grad(params.raw_t[i]);
      grads->raw_s[i] *= softplus_grad(params.raw_s[i]);
    }
  }
  return out;
}

struct LossAndGradients {
  LossBreakdown loss;
  GradSet grads;
  std::size_t cross_queries = 0;
};

/// Draws the step's planes from `rng`, then evaluates loss and gradients.
[[nodiscard]] inline LossAndGradients loss_and_gradients(
    const ParamSet& params, const FramePair& pair, const LossConfig& cfg,
    std::mt19937_64& rng) {
  StepContext ctx = make_step(cfg, rng);
  LossAndGradients out;
  out.loss = evaluate(params, pair, cfg, ctx, &out.grads);
  out.cross_queries = ctx.cross_queries;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

struct BlockReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::size_t samples_per_block = 200;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-6;
  /// Replay the sampling cells and |.| branches of the analytic pass so the
  /// central differences see the same smooth piece.
  bool freeze_branches = true;
};

/// Compares analytic gradients with central differences on a random subset
/// of coordinates of every parameter block.
[[nodiscard]] inline GradCheckReport grad_check(const ParamSet& params,
                                                const FramePair& pair,
                                                const LossConfig& cfg,
                                                std::mt19937_64& rng,
                                                const GradCheckOptions& opt = {}) {
  StepContext ctx = make_step(cfg, rng);
  ctx.forward.record_branches = opt.freeze_branches;
  ctx.backward.record_branches = opt.freeze_branches;
  GradSet analytic;
  evaluate(params, pair, cfg, ctx, &analytic);
  if (opt.freeze_branches) {
    ctx.forward.freeze_branches();
    ctx.backward.freeze_branches();
  }

  auto loss_at = [&](const ParamSet& p) {
    StepContext local = ctx;
    return evaluate(p, pair, cfg, local).total;
  };

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  auto record = [&](BlockReport& block, double a, double n) {
    const double abs_err = std::abs(a - n);
    const double denom = std::max({std::abs(a), std::abs(n), opt.floor});
    block.max_abs_error = std::max(block.max_abs_error, abs_err);
    block.max_rel_error = std::max(block.max_rel_error, abs_err / denom);
    ++block.checked;
  };
  auto pick = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > opt.samples_per_block) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.samples_per_block);
    }
    return idx;
  };

  auto check_volume = [&](const char* name, Volume ParamSet::*field,
                          const Volume& g) {
    BlockReport block{name};
    for (std::size_t i : pick(g.size())) {
      ParamSet plus = params, minus = params;
      (plus.*field)[i] += opt.step;
      (minus.*field)[i] -= opt.step;
      record(block, g[i], (loss_at(plus) - loss_at(minus)) / (2.0 * opt.step));
    }
    report.blocks.push_back(block);
  };
  check_volume("raw_density_t", &ParamSet::raw_t, analytic.raw_t);
  check_volume("raw_density_s", &ParamSet::raw_s, analytic.raw_s);

  {
    BlockReport block{"twist"};
    for (int i = 0; i < 6; ++i) {
      Vec6 e = Vec6::Zero();
      e[i] = opt.step;
      ParamSet plus = params, minus = params;
      plus.pose_ts = retract(params.pose_ts, e);
      minus.pose_ts = retract(params.pose_ts, -e);
      record(block, analytic.twist[i],
             (loss_at(plus) - loss_at(minus)) / (2.0 * opt.step));
    }
    report.blocks.push_back(block);
  }

  auto check_brightness = [&](const char* name,
                              BrightnessParams ParamSet::*field,
                              const Vec2& g) {
    BlockReport block{name};
    for (int i = 0; i < 2; ++i) {
      ParamSet plus = params, minus = params;
      (i == 0 ? (plus.*field).a : (plus.*field).b) += opt.step;
      (i == 0 ? (minus.*field).a : (minus.*field).b) -= opt.step;
      record(block, g[i], (loss_at(plus) - loss_at(minus)) / (2.0 * opt.step));
    }
    report.blocks.push_back(block);
  };
  check_brightness("brightness_st", &ParamSet::brightness_st,
                   analytic.brightness_st);
  check_brightness("brightness_ts", &ParamSet::brightness_ts,
                   analytic.brightness_ts);

  for (const auto& b : report.blocks) {
    report.max_rel_error = std::max(report.max_rel_error, b.max_rel_error);
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

/// A small random problem: smooth random images, random densities, a small
/// random motion and brightness offsets. Used by gradient checks.
struct RandomInstance {
  ParamSet params;
  FramePair pair;
  LossConfig config;
};

[[nodiscard]] inline RandomInstance random_instance(std::uint64_t seed,
                                                    int height = 8,
                                                    int width = 8,
                                                    int planes = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RandomInstance inst;
  auto& cfg = inst.config;
  cfg.planes = {planes, 1.0, 3.0, PlaneSampling::stratified};
  cfg.gamma = 2.0;  // keep most pixels so every path carries gradient
  cfg.weights = {0.1, 0.5, 0.2};

  auto& pair = inst.pair;
  pair.intrinsics = {static_cast<double>(width), static_cast<double>(width),
                     (width - 1) / 2.0, (height - 1) / 2.0, width, height};
  auto random_image = [&]() {
    Image img(3, height, width);
    for (int c = 0; c < 3; ++c) {
      const double fx = 0.3 + uni(rng), fy = 0.3 + uni(rng);
      const double phase = 6.0 * uni(rng);
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          img(c, y, x) = 0.5 + 0.25 * std::sin(fx * x + fy * y + phase) +
                         0.15 * (uni(rng) - 0.5);
        }
      }
    }
    return img;
  };
  pair.target = random_image();
  pair.source = random_image();

  auto& p = inst.params;
  p.raw_t = Volume(planes, height, width);
  p.raw_s = Volume(planes, height, width);
  for (auto& v : p.raw_t.values()) v = -0.5 + gauss(rng);
  for (auto& v : p.raw_s.values()) v = -0.5 + gauss(rng);
  Vec6 xi;
  for (int i = 0; i < 3; ++i) xi[i] = 0.02 * gauss(rng);
  for (int i = 3; i < 6; ++i) xi[i] = 0.05 * gauss(rng);
  p.pose_ts = se3_exp(Twist::from_vector(xi));
  p.brightness_st = {1.0 + 0.1 * gauss(rng), 0.05 * gauss(rng)};
  p.brightness_ts = {1.0 + 0.1 * gauss(rng), 0.05 * gauss(rng)};
  return inst;
}

}  // namespace voldepth
