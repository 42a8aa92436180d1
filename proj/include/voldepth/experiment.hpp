#pragma once

// Experiment orchestration: build or load pairs, fit them, write artifacts.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "voldepth/config.hpp"
#include "voldepth/harness.hpp"
#include "voldepth/io.hpp"
#include "voldepth/regularization.hpp"
#include "voldepth/scene.hpp"

namespace voldepth {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pair files
// ---------------------------------------------------------------------------

/// Writes target.png, source.png, depth_t.pfm, depth_s.pfm and pair.txt.
inline void export_pair(const FramePair& pair, const fs::path& dir) {
  fs::create_directories(dir);
  write_png_rgb((dir / "target.png").string(), pair.target);
  write_png_rgb((dir / "source.png").string(), pair.source);
  if (pair.gt_depth_t) write_pfm((dir / "depth_t.pfm").string(), *pair.gt_depth_t);
  if (pair.gt_depth_s) write_pfm((dir / "depth_s.pfm").string(), *pair.gt_depth_s);
  write_sidecar((dir / "pair.txt").string(),
                {pair.intrinsics, pair.gt_T_ts, pair.gt_brightness});
}

[[nodiscard]] inline DepthMap read_depth_file(const std::string& path,
                                              double png_scale) {
  const auto ext = fs::path(path).extension().string();
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".png") return read_png_depth(path, png_scale);
  throw FormatError(path, "depth must be .pfm or .png");
}

/// Loads a pair from disk. Depth files are optional; without them no depth
/// metrics are reported.
[[nodiscard]] inline FramePair ingest_pair(const IngestSpec& spec) {
  FramePair pair;
  pair.target = read_png_rgb(spec.target);
  pair.source = read_png_rgb(spec.source);
  if (!pair.target.same_shape(pair.source)) {
    throw FormatError(spec.source, "size " + std::to_string(pair.source.width()) + "x" +
                                       std::to_string(pair.source.height()) +
                                       " differs from target " +
                                       std::to_string(pair.target.width()) + "x" +
                                       std::to_string(pair.target.height()));
  }
  const Sidecar side = read_sidecar(spec.sidecar);
  if (side.intrinsics.width != pair.width() || side.intrinsics.height != pair.height()) {
    throw FormatError(spec.sidecar, "size does not match the images");
  }
  pair.intrinsics = side.intrinsics;
  pair.gt_T_ts = side.T_ts;
  pair.gt_brightness = side.brightness;
  auto load_depth = [&](const std::string& path) -> std::optional<DepthMap> {
    if (path.empty()) return std::nullopt;
    DepthMap d = read_depth_file(path, spec.depth_png_scale);
    if (d.width() != pair.width() || d.height() != pair.height()) {
      throw FormatError(path, "depth size does not match the images");
    }
    return d;
  };
  pair.gt_depth_t = load_depth(spec.depth_target);
  pair.gt_depth_s = load_depth(spec.depth_source);
  return pair;
}

// ---------------------------------------------------------------------------
// Fitting one pair
// ---------------------------------------------------------------------------

struct PreparedInit {
  ParamSet params;
  std::optional<double> perturbation_translation;
};

[[nodiscard]] inline PreparedInit prepare_init(const FramePair& pair,
                                               const FitSettings& s) {
  PreparedInit out;
  out.params = initial_params(pair, s.fit);
  const auto& pc = s.fit.loss.planes;
  if (s.init_depth == InitDepth::gt) {
    if (!pair.gt_depth_t || !pair.gt_depth_s) {
      throw std::invalid_argument("init_depth = gt needs ground-truth depth for both frames");
    }
    const PlaneSet mid = midpoint_planes(pc.count, pc.z_min, pc.z_max);
    out.params.raw_t = opaque_raw_from_depth(pair.gt_depth_t->z, mid);
    out.params.raw_s = opaque_raw_from_depth(pair.gt_depth_s->z, mid);
  }
  if (s.init_pose != InitPose::identity) {
    if (!pair.gt_T_ts) {
      throw std::invalid_argument("init_pose = gt/perturbed needs a ground-truth pose");
    }
    out.params.pose_ts = *pair.gt_T_ts;
  }
  if (s.init_pose == InitPose::perturbed) {
    double scale = 1.0;
    if (pair.gt_depth_t) {
      std::vector<double> z;
      for (std::size_t i = 0; i < pair.gt_depth_t->z.size(); ++i) {
        if (pair.gt_depth_t->valid[i]) z.push_back(pair.gt_depth_t->z[i]);
      }
      if (!z.empty()) scale = median(z);
    }
    std::mt19937_64 rng(derive_seed(s.fit.seed, 0x70e5));
    const double t = s.perturb_translation * scale;
    const RigidTransform p =
        random_motion(s.perturb_rotation_deg * 3.141592653589793 / 180.0, t, rng);
    out.params.pose_ts = compose(p, out.params.pose_ts);
    out.perturbation_translation = t;
  }
  return out;
}

struct PairResult {
  std::string name;
  FitReport report;
  std::optional<double> perturbation_translation;
  std::vector<std::string> failures;  // --assert thresholds not met
};

[[nodiscard]] inline std::vector<std::string> check_thresholds(
    const FitReport& r, const FitSettings& s,
    std::optional<double> perturbation_translation) {
  std::vector<std::string> out;
  if (r.diverged) out.push_back("diverged: " + r.error);
  if (s.assert_abs_rel) {
    if (!r.final_target) {
      out.push_back("abs_rel: no ground truth");
    } else if (!(r.final_target->abs_rel < *s.assert_abs_rel)) {
      out.push_back("abs_rel " + std::to_string(r.final_target->abs_rel) +
                    " >= " + std::to_string(*s.assert_abs_rel));
    }
  }
  if (s.assert_translation_ratio) {
    if (!r.final_pose || !perturbation_translation) {
      out.push_back("translation: needs ground-truth pose and init_pose = perturbed");
    } else {
      const double ratio = r.final_pose->translation / *perturbation_translation;
      if (!(ratio < *s.assert_translation_ratio)) {
        out.push_back("translation ratio " + std::to_string(ratio) + " >= " +
                      std::to_string(*s.assert_translation_ratio));
      }
    }
  }
  if (s.assert_rotation_deg) {
    if (!r.final_pose) {
      out.push_back("rotation: no ground-truth pose");
    } else if (!(r.final_pose->rotation_deg < *s.assert_rotation_deg)) {
      out.push_back("rotation " + std::to_string(r.final_pose->rotation_deg) +
                    " deg >= " + std::to_string(*s.assert_rotation_deg));
    }
  }
  return out;
}

[[nodiscard]] inline FramePair make_pair(const PairEntry& e) {
  return e.kind == PairKind::scene ? generate_pair(e.scene) : ingest_pair(e.ingest);
}

[[nodiscard]] inline PairResult run_pair(const FramePair& pair,
                                         const PairEntry& e) {
  PreparedInit init = prepare_init(pair, e.settings);
  PairResult res;
  res.name = e.name;
  res.perturbation_translation = init.perturbation_translation;
  res.report = fit_pair(pair, e.settings.fit, std::move(init.params));
  res.failures = check_thresholds(res.report, e.settings, res.perturbation_translation);
  return res;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline const char* trace_csv_header() {
  return "step,L_p,L_s,L_d,L_r,total,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";
}

namespace detail {

inline void write_loss_fields(std::ostream& os, const LossBreakdown* l) {
  if (l) {
    os << l->photometric << ',' << l->smoothness << ',' << l->depth << ','
       << l->brightness << ',' << l->total;
  } else {
    os << ",,,,";
  }
}

inline void write_metric_fields(std::ostream& os, const std::optional<DepthMetrics>& m) {
  if (m) {
    write_metrics_csv(os, *m);
  } else {
    os << ",,,,,,";
  }
}

}  // namespace detail

/// loss_trace.csv: one row per step, metric columns filled at eval steps.
/// metrics.csv: one row per evaluation (step 0 is the initialization).
inline void write_traces(const FitReport& r, const fs::path& dir) {
  std::ofstream trace(dir / "loss_trace.csv");
  std::ofstream metrics(dir / "metrics.csv");
  trace << std::setprecision(10) << trace_csv_header() << '\n';
  metrics << std::setprecision(10) << trace_csv_header() << '\n';
  std::size_t next_eval = 0;
  for (const auto& e : r.evals) {
    if (e.step != 0) break;
    metrics << "0,";
    detail::write_loss_fields(metrics, nullptr);
    metrics << ',';
    detail::write_metric_fields(metrics, e.target);
    metrics << '\n';
    ++next_eval;
  }
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const int step = static_cast<int>(i) + 1;
    const EvalRecord* ev = nullptr;
    if (next_eval < r.evals.size() && r.evals[next_eval].step == step) {
      ev = &r.evals[next_eval++];
    }
    trace << step << ',';
    detail::write_loss_fields(trace, &r.trace[i]);
    trace << ',';
    detail::write_metric_fields(trace, ev ? ev->target : std::nullopt);
    trace << '\n';
    if (ev) {
      metrics << step << ',';
      detail::write_loss_fields(metrics, &r.trace[i]);
      metrics << ',';
      detail::write_metric_fields(metrics, ev->target);
      metrics << '\n';
    }
  }
}

/// Occlusion mask of the forward direction under the fitted parameters.
[[nodiscard]] inline Mask estimated_occlusion(const ParamSet& p,
                                              const FramePair& pair,
                                              const FitConfig& cfg) {
  return occlusion_mask(render_eval_depth(p.raw_t, cfg), render_eval_depth(p.raw_s, cfg),
                        p.pose_ts, pair.intrinsics, pair.intrinsics,
                        cfg.loss.occlusion_threshold());
}

inline void write_artifacts(const FramePair& pair, const PairEntry& e,
                            const PairResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  const FitConfig& cfg = e.settings.fit;
  const ParamSet& p = res.report.params;
  const auto& pc = cfg.loss.planes;
  const PlaneSet mid = midpoint_planes(pc.count, pc.z_min, pc.z_max);
  write_png_rgb((dir / "target.png").string(), pair.target);
  write_png_rgb((dir / "source.png").string(), pair.source);
  const DepthMap dt = render_eval_depth(p.raw_t, cfg);
  const DepthMap ds = render_eval_depth(p.raw_s, cfg);
  write_pfm((dir / "pred_depth_t.pfm").string(), dt);
  write_pfm((dir / "pred_depth_s.pfm").string(), ds);
  write_depth_preview((dir / "pred_depth_t.png").string(), dt);
  write_depth_preview((dir / "pred_depth_s.png").string(), ds);
  if (pair.gt_depth_t) write_depth_preview((dir / "gt_depth_t.png").string(), *pair.gt_depth_t);
  write_png_mask((dir / "occlusion_mask.png").string(), estimated_occlusion(p, pair, cfg));
  if (pair.scene) write_png_mask((dir / "gt_occlusion.png").string(), gt_occlusion(pair));
  write_density((dir / "density_t.dvol").string(), {p.raw_t, mid});
  write_density((dir / "density_s.dvol").string(), {p.raw_s, mid});
  write_sidecar((dir / "fitted.txt").string(),
                {pair.intrinsics, p.pose_ts, p.brightness_st});
  write_traces(res.report, dir);
}

// ---------------------------------------------------------------------------
// Whole experiments
// ---------------------------------------------------------------------------

struct RunOptions {
  bool check = false;  // exit nonzero when an assert_* threshold fails
  std::optional<std::string> output_dir;
  std::vector<std::string> only;  // section names; empty runs all
};

/// Runs every pair of the configuration and writes artifacts under the
/// output directory plus summary.csv. Returns a process exit status.
inline int run_experiment(const ExperimentConfig& cfg, const RunOptions& opt,
                          std::ostream& log = std::cout) {
  const fs::path root = opt.output_dir ? *opt.output_dir : cfg.global.fit.output_dir;
  fs::create_directories(root);
  std::ofstream summary(root / "summary.csv");
  summary << std::setprecision(10)
          << "pair,steps,seconds,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,"
             "pose_t,pose_r_deg,low_conf,status\n";
  bool all_ok = true;
  std::size_t ran = 0;
  for (const auto& e : cfg.pairs) {
    if (!opt.only.empty() &&
        std::find(opt.only.begin(), opt.only.end(), e.name) == opt.only.end()) {
      continue;
    }
    ++ran;
    const FramePair pair = make_pair(e);
    const PairResult res = run_pair(pair, e);
    write_artifacts(pair, e, res, root / e.name);
    const auto& r = res.report;
    log << std::fixed << std::setprecision(4) << e.name << ": "
        << r.trace.size() << " steps, " << r.seconds << " s";
    if (r.final_target) log << ", abs_rel " << r.final_target->abs_rel;
    if (r.final_pose) {
      log << ", pose error " << r.final_pose->translation << " / "
          << r.final_pose->rotation_deg << " deg";
    }
    if (const std::size_t lc = r.evals.back().low_confidence) {
      log << ", " << lc << " low-confidence pixels";
    }
    log << '\n' << std::defaultfloat;
    const bool ok = res.failures.empty();
    if (opt.check) {
      for (const auto& f : res.failures) log << "  FAIL " << e.name << ": " << f << '\n';
      if (ok) log << "  ok " << e.name << '\n';
      all_ok = all_ok && ok;
    }
    summary << e.name << ',' << r.trace.size() << ',' << r.seconds << ',';
    detail::write_metric_fields(summary, r.final_target);
    summary << ',';
    if (r.final_pose) {
      summary << r.final_pose->translation << ',' << r.final_pose->rotation_deg;
    } else {
      summary << ',';
    }
    summary << ',' << r.evals.back().low_confidence;
    summary << ',' << (r.diverged ? "diverged" : (ok ? "ok" : "fail")) << '\n';
  }
  if (ran == 0) {
    log << "no pair selected\n";
    return 2;
  }
  return all_ok ? 0 : 1;
}

}  // namespace voldepth
