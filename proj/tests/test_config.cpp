#include <gtest/gtest.h>

#include <sstream>

#include "voldepth/config.hpp"

using namespace voldepth;

namespace {

ExperimentConfig parse(const std::string& text,
                       const std::vector<std::pair<std::string, std::string>>& ov = {}) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg", ov);
}

std::string error_of(const std::string& text) {
  try {
    (void)parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, GlobalsSectionsAndOverrides) {
  const auto cfg = parse(
      "# experiment\n"
      "steps = 300\n"
      "beta = 0.5   # trailing comment\n"
      "\n"
      "[scene a]\n"
      "layout = staircase\n"
      "width = 40\n"
      "steps = 50\n"
      "[scene b]\n"
      "scene_seed = 17\n"
      "init_pose = perturbed\n",
      {{"lr_twist", "0.002"}});
  EXPECT_EQ(cfg.global.fit.steps, 300);
  ASSERT_EQ(cfg.pairs.size(), 2u);
  const auto& a = cfg.pairs[0];
  EXPECT_EQ(a.name, "a");
  EXPECT_EQ(a.scene.layout, Layout::staircase);
  EXPECT_EQ(a.scene.width, 40);
  EXPECT_EQ(a.settings.fit.steps, 50);
  EXPECT_EQ(a.settings.fit.loss.weights.beta, 0.5);
  EXPECT_EQ(a.settings.fit.lr.twist, 0.002);
  EXPECT_EQ(a.scene.seed, derive_seed(0, 0));
  const auto& b = cfg.pairs[1];
  EXPECT_EQ(b.settings.fit.steps, 300);
  EXPECT_EQ(b.scene.seed, 17u);
  EXPECT_TRUE(b.scene_seed_set);
  EXPECT_EQ(b.settings.init_pose, InitPose::perturbed);
}

TEST(Config, OverridesBeatSectionValues) {
  const auto cfg = parse("[scene a]\nsteps = 50\n", {{"steps", "7"}});
  EXPECT_EQ(cfg.pairs[0].settings.fit.steps, 7);
}

TEST(Config, UnknownKeysAreNamedWithLine) {
  EXPECT_EQ(error_of("steps = 1\nstepz = 2\n"), "test.cfg:2: unknown config key 'stepz'");
  EXPECT_EQ(error_of("[scene a]\nwdth = 2\n"),
            "test.cfg:2: unknown config key 'wdth' in [scene a]");
  // Scene keys only belong to sections; file keys only to ingest sections.
  EXPECT_NE(error_of("width = 40\n").find("'width'"), std::string::npos);
  EXPECT_NE(error_of("[scene a]\ntarget = x.png\n").find("'target'"), std::string::npos);
  EXPECT_NE(
      parse("[ingest a]\ntarget = t.png\nsource = s.png\nsidecar = p.txt\n").pairs[0].ingest.target,
      "");
  EXPECT_THROW((void)parse("[ingest a]\ntarget = t.png\n"), ConfigError);
  try {
    (void)parse("", {{"nope", "1"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'nope'"), std::string::npos);
  }
}

TEST(Config, MalformedLines) {
  EXPECT_NE(error_of("steps 5\n").find(":1:"), std::string::npos);
  EXPECT_NE(error_of("[scene a\n").find("unterminated"), std::string::npos);
  EXPECT_NE(error_of("[mesh a]\n").find("mesh"), std::string::npos);
  EXPECT_NE(error_of("[scene a]\n[scene a]\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("steps = many\n").find("steps"), std::string::npos);
  EXPECT_NE(error_of("[scene a]\nlayout = cube\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("sampling = random\n").find("stratified"), std::string::npos);
}

TEST(Config, BooleanSpellings) {
  for (const char* t : {"true", "1", "yes", "on"}) {
    EXPECT_TRUE(parse(std::string("occlusion_mask = ") + t).global.fit.loss.use_occlusion_mask);
  }
  for (const char* f : {"false", "0", "no", "off"}) {
    EXPECT_FALSE(parse(std::string("occlusion_mask = ") + f).global.fit.loss.use_occlusion_mask);
  }
  EXPECT_THROW((void)parse("occlusion_mask = maybe"), ConfigError);
}

TEST(Config, DerivedSeedsDifferPerSectionAndMaster) {
  const auto cfg = parse("seed = 3\n[scene a]\n[scene b]\n");
  EXPECT_NE(cfg.pairs[0].scene.seed, cfg.pairs[1].scene.seed);
  EXPECT_EQ(cfg.pairs[0].scene.seed, derive_seed(3, 0));
  EXPECT_NE(derive_seed(3, 0), derive_seed(4, 0));
  EXPECT_EQ(derive_seed(3, 1), derive_seed(3, 1));
}
