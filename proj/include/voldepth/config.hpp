#pragma once

// Plain-text experiment configuration.
//
//   # comment
//   key = value            global fit settings
//   [scene NAME]           a synthetic pair; scene keys plus fit overrides
//   [ingest NAME]          a pair read from disk; file keys plus fit overrides
//
// Every key is looked up in a fixed table; anything else is an error that
// names the key and the line.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/harness.hpp"
#include "voldepth/scene.hpp"

namespace voldepth {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InitPose { identity, gt, perturbed };
enum class InitDepth { constant, gt };

/// Everything needed to fit one pair beyond the pair itself.
struct FitSettings {
  FitConfig fit;
  InitPose init_pose = InitPose::identity;
  InitDepth init_depth = InitDepth::constant;
  double perturb_rotation_deg = 2.0;
  /// Translation perturbation as a fraction of the median ground-truth depth.
  double perturb_translation = 0.02;
  // Thresholds checked under --assert; unset ones are not checked.
  std::optional<double> assert_abs_rel;
  std::optional<double> assert_translation_ratio;
  std::optional<double> assert_rotation_deg;
};

struct IngestSpec {
  std::string target;
  std::string source;
  std::string sidecar;
  std::string depth_target;  // optional, .pfm or 16-bit .png
  std::string depth_source;
  double depth_png_scale = 1000.0;
};

enum class PairKind { scene, ingest };

struct PairEntry {
  std::string name;
  PairKind kind = PairKind::scene;
  SceneSpec scene;
  bool scene_seed_set = false;
  IngestSpec ingest;
  FitSettings settings;
};

struct ExperimentConfig {
  FitSettings global;
  std::vector<PairEntry> pairs;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d) || std::abs(d) > 1e9) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return static_cast<int>(d);
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename Target>
using KeyTable =
    std::map<std::string, std::function<void(Target&, const std::string&, const std::string&)>>;

}  // namespace detail

/// Fit keys, valid globally and inside any section.
inline const detail::KeyTable<FitSettings>& fit_keys() {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  static const detail::KeyTable<FitSettings> table = {
      {"seed", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.seed = detail::parse_seed(k, v); }},
      {"steps", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.steps = parse_int(k, v); }},
      {"eval_every", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.eval_every = parse_int(k, v); }},
      {"planes", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.planes.count = parse_int(k, v); }},
      {"z_min", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.planes.z_min = parse_double(k, v); }},
      {"z_max", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.planes.z_max = parse_double(k, v); }},
      {"sampling", [](FitSettings& s, const std::string& k, const std::string& v) {
         if (v == "stratified") s.fit.loss.planes.sampling = PlaneSampling::stratified;
         else if (v == "midpoint") s.fit.loss.planes.sampling = PlaneSampling::midpoint;
         else throw ConfigError("key '" + k + "': expected stratified or midpoint, got '" + v + "'");
       }},
      {"alpha", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.weights.alpha = parse_double(k, v); }},
      {"beta", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.weights.beta = parse_double(k, v); }},
      {"eta", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.weights.eta = parse_double(k, v); }},
      {"gamma", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.gamma = parse_double(k, v); }},
      {"occlusion_mask", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.use_occlusion_mask = parse_bool(k, v); }},
      {"identity_mask", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.use_identity_mask = parse_bool(k, v); }},
      {"bidirectional", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.bidirectional = parse_bool(k, v); }},
      {"normalize_depth", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.loss.render.normalize = parse_bool(k, v); }},
      {"smoothness_target", [](FitSettings& s, const std::string& k, const std::string& v) {
         if (v == "disparity") s.fit.loss.smoothness = SmoothnessTarget::disparity;
         else if (v == "depth") s.fit.loss.smoothness = SmoothnessTarget::depth;
         else throw ConfigError("key '" + k + "': expected disparity or depth, got '" + v + "'");
       }},
      {"lr_density", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.lr.density = parse_double(k, v); }},
      {"lr_twist", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.lr.twist = parse_double(k, v); }},
      {"lr_brightness", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.lr.brightness = parse_double(k, v); }},
      {"lr_decay", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.lr_decay = parse_double(k, v); }},
      {"init_optical_depth", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.init_optical_depth = parse_double(k, v); }},
      {"median_scale", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.metrics.median_scale = parse_bool(k, v); }},
      {"eval_min_depth", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.metrics.min_depth = parse_double(k, v); }},
      {"eval_max_depth", [](FitSettings& s, const std::string& k, const std::string& v) { s.fit.metrics.max_depth = parse_double(k, v); }},
      {"output_dir", [](FitSettings& s, const std::string&, const std::string& v) { s.fit.output_dir = v; }},
      {"init_pose", [](FitSettings& s, const std::string& k, const std::string& v) {
         if (v == "identity") s.init_pose = InitPose::identity;
         else if (v == "gt") s.init_pose = InitPose::gt;
         else if (v == "perturbed") s.init_pose = InitPose::perturbed;
         else throw ConfigError("key '" + k + "': expected identity, gt or perturbed, got '" + v + "'");
       }},
      {"init_depth", [](FitSettings& s, const std::string& k, const std::string& v) {
         if (v == "constant") s.init_depth = InitDepth::constant;
         else if (v == "gt") s.init_depth = InitDepth::gt;
         else throw ConfigError("key '" + k + "': expected constant or gt, got '" + v + "'");
       }},
      {"perturb_rotation_deg", [](FitSettings& s, const std::string& k, const std::string& v) { s.perturb_rotation_deg = parse_double(k, v); }},
      {"perturb_translation", [](FitSettings& s, const std::string& k, const std::string& v) { s.perturb_translation = parse_double(k, v); }},
      {"assert_abs_rel", [](FitSettings& s, const std::string& k, const std::string& v) { s.assert_abs_rel = parse_double(k, v); }},
      {"assert_translation_ratio", [](FitSettings& s, const std::string& k, const std::string& v) { s.assert_translation_ratio = parse_double(k, v); }},
      {"assert_rotation_deg", [](FitSettings& s, const std::string& k, const std::string& v) { s.assert_rotation_deg = parse_double(k, v); }},
  };
  return table;
}

inline const detail::KeyTable<PairEntry>& scene_keys() {
  using detail::parse_double;
  using detail::parse_int;
  static const detail::KeyTable<PairEntry> table = {
      {"layout", [](PairEntry& e, const std::string&, const std::string& v) { e.scene.layout = parse_layout(v); }},
      {"texture", [](PairEntry& e, const std::string&, const std::string& v) { e.scene.texture = parse_texture(v); }},
      {"texture_scale", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.texture_scale = parse_double(k, v); }},
      {"depth_near", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.depth_near = parse_double(k, v); }},
      {"depth_far", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.depth_far = parse_double(k, v); }},
      {"stair_steps", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.steps = parse_int(k, v); }},
      {"rotation", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.rotation = parse_double(k, v); }},
      {"translation", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.translation = parse_double(k, v); }},
      {"gain", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.gain = parse_double(k, v); }},
      {"bias", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.bias = parse_double(k, v); }},
      {"width", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.width = parse_int(k, v); }},
      {"height", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.height = parse_int(k, v); }},
      {"focal", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.focal = parse_double(k, v); }},
      {"min_gradient_energy", [](PairEntry& e, const std::string& k, const std::string& v) { e.scene.min_gradient_energy = parse_double(k, v); }},
      {"scene_seed", [](PairEntry& e, const std::string& k, const std::string& v) {
         e.scene.seed = detail::parse_seed(k, v);
         e.scene_seed_set = true;
       }},
  };
  return table;
}

inline const detail::KeyTable<PairEntry>& ingest_keys() {
  static const detail::KeyTable<PairEntry> table = {
      {"target", [](PairEntry& e, const std::string&, const std::string& v) { e.ingest.target = v; }},
      {"source", [](PairEntry& e, const std::string&, const std::string& v) { e.ingest.source = v; }},
      {"sidecar", [](PairEntry& e, const std::string&, const std::string& v) { e.ingest.sidecar = v; }},
      {"depth_target", [](PairEntry& e, const std::string&, const std::string& v) { e.ingest.depth_target = v; }},
      {"depth_source", [](PairEntry& e, const std::string&, const std::string& v) { e.ingest.depth_source = v; }},
      {"depth_png_scale", [](PairEntry& e, const std::string& k, const std::string& v) { e.ingest.depth_png_scale = detail::parse_double(k, v); }},
  };
  return table;
}

/// Applies one global fit key; throws ConfigError naming an unknown key.
inline void apply_fit_key(FitSettings& s, const std::string& key,
                          const std::string& value) {
  const auto& table = fit_keys();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(s, key, value);
}

/// Derived per-pair seed so that every pair has its own stream.
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t master,
                                               std::size_t index) {
  return detail::splitmix(master ^ detail::splitmix(index + 1));
}

/// Parses configuration text. `origin` names the source in messages.
/// `overrides` are applied after the global keys of the text and before any
/// section's own keys.
[[nodiscard]] inline ExperimentConfig parse_config(
    std::istream& in, const std::string& origin,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  struct Entry {
    std::string key, value;
    int line;
  };
  struct Section {
    PairEntry pair;
    std::vector<Entry> entries;
  };
  ExperimentConfig cfg;
  std::vector<Entry> globals;
  std::vector<Section> sections;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      std::istringstream hs(line.substr(1, line.size() - 2));
      std::string kind, name, extra;
      hs >> kind >> name;
      if (name.empty() || (hs >> extra)) fail("section header must be [scene NAME] or [ingest NAME]");
      Section sec;
      sec.pair.name = name;
      if (kind == "scene") sec.pair.kind = PairKind::scene;
      else if (kind == "ingest") sec.pair.kind = PairKind::ingest;
      else fail("unknown section kind '" + kind + "'");
      for (const auto& s : sections) {
        if (s.pair.name == name) fail("duplicate section name '" + name + "'");
      }
      sections.push_back(std::move(sec));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    Entry e{detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), lineno};
    if (e.key.empty()) fail("empty key");
    (sections.empty() ? globals : sections.back().entries).push_back(std::move(e));
  }

  auto apply = [&](auto&& fn, const Entry& e) {
    lineno = e.line;
    try {
      fn();
    } catch (const ConfigError& err) {
      fail(err.what());
    } catch (const std::invalid_argument& err) {
      fail("key '" + e.key + "': " + err.what());
    }
  };
  for (const auto& e : globals) {
    apply([&] { apply_fit_key(cfg.global, e.key, e.value); }, e);
  }
  for (const auto& [k, v] : overrides) {
    try {
      apply_fit_key(cfg.global, k, v);
    } catch (const ConfigError& err) {
      throw ConfigError(std::string("override: ") + err.what());
    }
  }
  for (std::size_t i = 0; i < sections.size(); ++i) {
    auto& sec = sections[i];
    PairEntry& pair = sec.pair;
    pair.settings = cfg.global;
    const auto& own = pair.kind == PairKind::scene ? scene_keys() : ingest_keys();
    for (const auto& e : sec.entries) {
      apply([&] {
        const auto it = own.find(e.key);
        if (it != own.end()) {
          it->second(pair, e.key, e.value);
        } else if (fit_keys().count(e.key)) {
          apply_fit_key(pair.settings, e.key, e.value);
        } else {
          throw ConfigError("unknown config key '" + e.key + "' in [" +
                            (pair.kind == PairKind::scene ? "scene " : "ingest ") +
                            pair.name + "]");
        }
      }, e);
    }
    // Command-line overrides win over section values too.
    for (const auto& [k, v] : overrides) apply_fit_key(pair.settings, k, v);
    if (pair.kind == PairKind::scene && !pair.scene_seed_set) {
      pair.scene.seed = derive_seed(pair.settings.fit.seed, i);
    }
    if (pair.kind == PairKind::ingest &&
        (pair.ingest.target.empty() || pair.ingest.source.empty() ||
         pair.ingest.sidecar.empty())) {
      throw ConfigError(origin + ": [ingest " + pair.name +
                        "] needs target, source and sidecar");
    }
    cfg.pairs.push_back(std::move(pair));
  }
  return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  return parse_config(in, path, overrides);
}

}  // namespace voldepth
