// voldepth command-line front end: gen, fit, grad-check, eval, render.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "voldepth/voldepth.hpp"

namespace vd = voldepth;

namespace {

// One string slot per table key; only the flags given on the command line
// are forwarded.
struct MirroredFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  template <typename Table>
  void add(CLI::App* app, const Table& table, const std::string& group) {
    for (const auto& [key, fn] : table) {
      (void)fn;
      if (options.count(key)) continue;
      options[key] = app->add_option("--" + key, values[key])->group(group);
    }
  }

  [[nodiscard]] std::vector<std::pair<std::string, std::string>> given(
      const std::map<std::string, std::string>& exclude_from = {}) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, opt] : options) {
      if (opt->count() && !exclude_from.count(key)) out.emplace_back(key, values.at(key));
    }
    return out;
  }
};

template <typename Table>
std::map<std::string, std::string> keys_of(const Table& t) {
  std::map<std::string, std::string> out;
  for (const auto& [k, fn] : t) {
    (void)fn;
    out[k];
  }
  return out;
}

// Builds the experiment from --config, or from the scene/ingest flags when no
// config file is given.
vd::ExperimentConfig build_experiment(const std::string& config_path,
                                      const MirroredFlags& flags) {
  const auto scene_keys = keys_of(vd::scene_keys());
  const auto ingest_keys = keys_of(vd::ingest_keys());
  std::vector<std::pair<std::string, std::string>> fit_overrides;
  std::vector<std::pair<std::string, std::string>> pair_flags;
  for (const auto& kv : flags.given()) {
    if (scene_keys.count(kv.first) || ingest_keys.count(kv.first)) {
      pair_flags.push_back(kv);
    } else {
      fit_overrides.push_back(kv);
    }
  }
  if (!config_path.empty()) {
    if (!pair_flags.empty()) {
      throw vd::ConfigError("--" + pair_flags.front().first +
                            " describes a pair; put it in the config file instead");
    }
    return vd::load_config(config_path, fit_overrides);
  }
  bool ingest = false;
  for (const auto& [k, v] : pair_flags) ingest = ingest || ingest_keys.count(k);
  std::ostringstream text;
  text << (ingest ? "[ingest pair]\n" : "[scene pair]\n");
  for (const auto& [k, v] : pair_flags) text << k << " = " << v << '\n';
  std::istringstream in(text.str());
  return vd::parse_config(in, "command line", fit_overrides);
}

int cmd_gen(const std::string& config, const MirroredFlags& flags,
            const std::string& out) {
  const auto cfg = build_experiment(config, flags);
  for (const auto& e : cfg.pairs) {
    if (e.kind != vd::PairKind::scene) continue;
    const auto dir = vd::fs::path(out) / e.name;
    vd::export_pair(vd::generate_pair(e.scene), dir);
    vd::write_png_mask((dir / "gt_occlusion.png").string(),
                       vd::gt_occlusion(vd::generate_pair(e.scene)));
    std::cout << "wrote " << dir.string() << '\n';
  }
  return 0;
}

int cmd_fit(const std::string& config, const MirroredFlags& flags,
            const std::string& out, bool check,
            const std::vector<std::string>& only) {
  const auto cfg = build_experiment(config, flags);
  vd::RunOptions opt;
  opt.check = check;
  if (!out.empty()) opt.output_dir = out;
  opt.only = only;
  return vd::run_experiment(cfg, opt, std::cout);
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  int seeds = 1;
  int size = 8;
  int planes = 4;
  double step = 1e-4;
  double tolerance = 1e-4;
  double floor = 1e-8;
  std::size_t samples = 200;
  bool no_freeze = false;
};

int cmd_grad_check(const GradCheckArgs& a) {
  double worst = 0.0;
  for (int i = 0; i < a.seeds; ++i) {
    const std::uint64_t seed = a.seed + i;
    auto inst = vd::random_instance(seed, a.size, a.size, a.planes);
    std::mt19937_64 rng(vd::derive_seed(seed, 1));
    vd::GradCheckOptions opt;
    opt.step = a.step;
    opt.tolerance = a.tolerance;
    opt.samples_per_block = a.samples;
    opt.floor = a.floor;
    opt.freeze_branches = !a.no_freeze;
    const auto rep = vd::grad_check(inst.params, inst.pair, inst.config, rng, opt);
    std::cout << "seed " << seed << ":";
    for (const auto& b : rep.blocks) {
      std::cout << ' ' << b.name << '=' << std::scientific << std::setprecision(2)
                << b.max_rel_error << std::defaultfloat;
    }
    std::cout << '\n';
    worst = std::max(worst, rep.max_rel_error);
  }
  std::cout << "max relative error " << std::scientific << std::setprecision(3)
            << worst << " (tolerance " << a.tolerance << ")\n";
  return worst < a.tolerance ? 0 : 1;
}

struct EvalArgs {
  std::string pred, gt;
  double png_scale = 1000.0;
  bool median_scale = true;
  double min_depth = 0.1;
  double max_depth = 80.0;
};

int cmd_eval(const EvalArgs& a) {
  const auto pred = vd::read_depth_file(a.pred, a.png_scale);
  const auto gt = vd::read_depth_file(a.gt, a.png_scale);
  vd::MetricOptions opt;
  opt.median_scale = a.median_scale;
  opt.min_depth = a.min_depth;
  opt.max_depth = a.max_depth;
  const auto m = vd::depth_metrics(pred, gt, opt);
  std::cout << vd::metrics_csv_header() << '\n' << std::setprecision(8);
  vd::write_metrics_csv(std::cout, m);
  std::cout << '\n';
  return 0;
}

int cmd_render(const std::string& volume, const std::string& out,
               const std::string& preview, bool normalize) {
  const auto v = vd::read_density(volume);
  vd::RenderOptions opt;
  opt.normalize = normalize;
  const auto depth = vd::render_volume_depth(v, opt);
  vd::write_pfm(out, depth);
  if (!preview.empty()) vd::write_depth_preview(preview, depth);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density-volume depth fitting"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "write synthetic pairs (PNG + PFM + sidecar)");
  auto* fit = app.add_subcommand("fit", "fit pairs from a config file or flags");
  auto* gc = app.add_subcommand("grad-check", "compare analytic and numerical gradients");
  auto* ev = app.add_subcommand("eval", "depth metrics of a prediction against ground truth");
  auto* rd = app.add_subcommand("render", "render depth from a saved density volume");

  std::string config, out;
  bool check = false;
  std::vector<std::string> only;
  MirroredFlags gen_flags, fit_flags;
  for (auto* sub : {gen, fit}) {
    sub->add_option("--config", config, "experiment config file")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out, "output directory");
  }
  gen_flags.add(gen, vd::fit_keys(), "Fit");
  gen_flags.add(gen, vd::scene_keys(), "Scene");
  fit_flags.add(fit, vd::fit_keys(), "Fit");
  fit_flags.add(fit, vd::scene_keys(), "Scene");
  fit_flags.add(fit, vd::ingest_keys(), "Ingest");
  fit->add_flag("--assert", check, "exit nonzero if any assert_* threshold fails");
  fit->add_option("--only", only, "fit only these sections");

  GradCheckArgs gca;
  gc->add_option("--seed", gca.seed, "first instance seed");
  gc->add_option("--seeds", gca.seeds, "number of instances")->check(CLI::PositiveNumber);
  gc->add_option("--size", gca.size, "image width and height")->check(CLI::PositiveNumber);
  gc->add_option("--planes", gca.planes, "planes per volume")->check(CLI::PositiveNumber);
  gc->add_option("--step", gca.step, "central difference step");
  gc->add_option("--tolerance", gca.tolerance, "maximum relative error");
  gc->add_option("--floor", gca.floor, "smallest relative-error denominator");
  gc->add_option("--samples", gca.samples, "coordinates per block");
  gc->add_flag("--no-freeze", gca.no_freeze, "do not replay sampling branches");

  EvalArgs eva;
  ev->add_option("--pred", eva.pred, "predicted depth (.pfm or .png)")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", eva.gt, "ground-truth depth (.pfm or .png)")->required()->check(CLI::ExistingFile);
  ev->add_option("--png-scale", eva.png_scale, "16-bit PNG units per scene unit");
  ev->add_option("--median-scale", eva.median_scale, "rescale by the median ratio");
  ev->add_option("--min-depth", eva.min_depth);
  ev->add_option("--max-depth", eva.max_depth);

  std::string volume, depth_out, preview;
  bool normalize = false;
  rd->add_option("--volume", volume, ".dvol file")->required()->check(CLI::ExistingFile);
  rd->add_option("-o,--out", depth_out, "output PFM")->required();
  rd->add_option("--preview", preview, "optional PNG preview");
  rd->add_flag("--normalize", normalize, "divide by the accumulated weight");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config, gen_flags, out.empty() ? "pairs" : out);
    if (fit->parsed()) return cmd_fit(config, fit_flags, out, check, only);
    if (gc->parsed()) return cmd_grad_check(gca);
    if (ev->parsed()) return cmd_eval(eva);
    if (rd->parsed()) return cmd_render(volume, depth_out, preview, normalize);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
