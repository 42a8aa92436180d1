#pragma once

// Direct optimization of per-frame density volumes, pose and brightness for
// one frame pair.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/difftape.hpp"
#include "voldepth/frame.hpp"
#include "voldepth/metrics.hpp"
#include "voldepth/rendering.hpp"

namespace voldepth {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam state for one parameter block. A learning rate of zero freezes it.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, AdamOptions opt = {})
      : lr_(lr), opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  [[nodiscard]] double learning_rate() const { return lr_; }

  /// Returns the step to add to the parameters for gradient `g`.
  template <typename G>
  std::vector<double> step(const G& g, double lr_scale = 1.0) {
    ++t_;
    std::vector<double> out(m_.size(), 0.0);
    if (lr_ == 0.0) return out;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g[i];
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      out[i] = -lr_ * lr_scale * (m_[i] / c1) /
               (std::sqrt(v_[i] / c2) + opt_.epsilon);
    }
    return out;
  }

 private:
  double lr_ = 0.0;
  AdamOptions opt_;
  std::vector<double> m_;
  std::vector<double> v_;
  int t_ = 0;
};

struct LearningRates {
  double density = 0.1;
  double twist = 1e-3;
  double brightness = 1e-3;
};

struct FitConfig {
  LossConfig loss;
  LearningRates lr;
  AdamOptions adam;
  /// Learning rates are multiplied by decay^(step / steps).
  double lr_decay = 1.0;
  int steps = 2000;
  int eval_every = 100;
  std::uint64_t seed = 0;
  /// Per-plane optical depth sigma * delta of the initial density.
  double init_optical_depth = 0.1;
  MetricOptions metrics;
  std::string output_dir = "out";

  void validate() const {
    loss.planes.validate();
    loss.weights.validate();
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    for (double r : {lr.density, lr.twist, lr.brightness}) {
      if (!(r >= 0.0) || !std::isfinite(r)) {
        throw std::invalid_argument("learning rates must be finite and >= 0");
      }
    }
    if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be > 0");
    if (!(init_optical_depth > 0.0)) {
      throw std::invalid_argument("init_optical_depth must be > 0");
    }
  }
};

struct EvalRecord {
  int step = 0;
  /// Target pixels whose eval-mode weights sum below kLowConfidence.
  std::size_t low_confidence = 0;
  std::optional<DepthMetrics> target;
  std::optional<DepthMetrics> source;
  std::optional<PoseError> pose;
};

struct FitReport {
  std::vector<LossBreakdown> trace;  // one entry per step run
  std::vector<EvalRecord> evals;
  std::optional<DepthMetrics> final_target;
  std::optional<DepthMetrics> final_source;
  std::optional<PoseError> final_pose;
  ParamSet params;
  std::size_t cross_queries = 0;
  double seconds = 0.0;
  bool diverged = false;
  std::string error;
};

[[nodiscard]] inline ParamSet initial_params(const FramePair& pair,
                                             const FitConfig& cfg) {
  const auto& pc = cfg.loss.planes;
  const double delta = (pc.z_max - pc.z_min) / pc.count;
  const double raw = inverse_softplus(cfg.init_optical_depth / delta);
  ParamSet p;
  p.raw_t = Volume(pc.count, pair.height(), pair.width(), raw);
  p.raw_s = p.raw_t;
  return p;
}

/// Depth of each frame rendered with midpoint planes.
[[nodiscard]] inline DepthMap render_eval_depth(const Volume& raw,
                                                const FitConfig& cfg) {
  const auto& pc = cfg.loss.planes;
  const PlaneSet mid = midpoint_planes(pc.count, pc.z_min, pc.z_max);
  return render_depth(compute_weights(activate_density(raw), mid), mid,
                      cfg.loss.render);
}

/// Weight sum below which a rendered pixel is mostly empty space.
inline constexpr double kLowConfidence = 0.5;

[[nodiscard]] inline std::size_t count_low_confidence(const Volume& raw,
                                                      const FitConfig& cfg) {
  const auto& pc = cfg.loss.planes;
  const PlaneSet mid = midpoint_planes(pc.count, pc.z_min, pc.z_max);
  const RenderWeights rw = compute_weights(activate_density(raw), mid);
  const std::size_t stride = rw.weights.plane_size();
  std::size_t n = 0;
  for (std::size_t p = 0; p < stride; ++p) {
    double sum = 0.0;
    for (int k = 0; k < pc.count; ++k) sum += rw.weights[k * stride + p];
    n += sum < kLowConfidence;
  }
  return n;
}

[[nodiscard]] inline EvalRecord evaluate_fit(const ParamSet& params,
                                             const FramePair& pair,
                                             const FitConfig& cfg, int step) {
  EvalRecord rec;
  rec.step = step;
  rec.low_confidence = count_low_confidence(params.raw_t, cfg);
  if (pair.gt_depth_t) {
    rec.target = depth_metrics(render_eval_depth(params.raw_t, cfg),
                               *pair.gt_depth_t, cfg.metrics);
  }
  if (pair.gt_depth_s) {
    rec.source = depth_metrics(render_eval_depth(params.raw_s, cfg),
                               *pair.gt_depth_s, cfg.metrics);
  }
  if (pair.gt_T_ts) rec.pose = pose_error(params.pose_ts, *pair.gt_T_ts);
  return rec;
}

namespace detail {

inline void apply_step(Volume& x, const std::vector<double>& d) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += d[i];
}

}  // namespace detail

/// Runs Adam on the pair's loss from `init` (or the default initialization).
/// Non-finite values stop the run; the report then holds what was done.
[[nodiscard]] inline FitReport fit_pair(const FramePair& pair,
                                        const FitConfig& cfg,
                                        std::optional<ParamSet> init = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  FitReport report;
  ParamSet params = init ? std::move(*init) : initial_params(pair, cfg);
  validate_shapes(params, pair, cfg.loss);

  Adam adam_t(params.raw_t.size(), cfg.lr.density, cfg.adam);
  Adam adam_s(params.raw_s.size(), cfg.lr.density, cfg.adam);
  Adam adam_pose(6, cfg.lr.twist, cfg.adam);
  Adam adam_b(4, cfg.lr.brightness, cfg.adam);

  report.evals.push_back(evaluate_fit(params, pair, cfg, 0));
  report.trace.reserve(cfg.steps);
  for (int step = 1; step <= cfg.steps; ++step) {
    LossAndGradients lg;
    try {
      lg = loss_and_gradients(params, pair, cfg.loss, rng);
    } catch (const NumericalError& e) {
      report.diverged = true;
      report.error = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    report.cross_queries += lg.cross_queries;
    if (!std::isfinite(lg.loss.total)) {
      report.diverged = true;
      report.error = "step " + std::to_string(step) + ": non-finite loss";
      break;
    }
    report.trace.push_back(lg.loss);

    const double scale =
        std::pow(cfg.lr_decay, static_cast<double>(step - 1) / cfg.steps);
    detail::apply_step(params.raw_t, adam_t.step(lg.grads.raw_t, scale));
    detail::apply_step(params.raw_s, adam_s.step(lg.grads.raw_s, scale));
    const auto dxi = adam_pose.step(lg.grads.twist, scale);
    params.pose_ts = retract(params.pose_ts, Vec6::Map(dxi.data()));
    const Eigen::Vector4d gb(lg.grads.brightness_st.x(),
                             lg.grads.brightness_st.y(),
                             lg.grads.brightness_ts.x(),
                             lg.grads.brightness_ts.y());
    const auto db = adam_b.step(gb, scale);
    params.brightness_st.a = std::max(params.brightness_st.a + db[0], 1e-3);
    params.brightness_st.b += db[1];
    params.brightness_ts.a = std::max(params.brightness_ts.a + db[2], 1e-3);
    params.brightness_ts.b += db[3];

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      report.evals.push_back(evaluate_fit(params, pair, cfg, step));
    }
  }

  const EvalRecord& last = report.evals.back();
  report.final_target = last.target;
  report.final_source = last.source;
  report.final_pose = last.pose;
  report.params = std::move(params);
  report.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return report;
}

}  // namespace voldepth
