#include <filesystem>

#include <gtest/gtest.h>

#include "gcm/checkpoint.hpp"
#include "gcm/run_config.hpp"

using namespace gcm;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = (fs::temp_directory_path() / ("gcm_cfg_" + name + ".ini")).string();
  write_text_file(path, text);
  return path;
}

}  // namespace

TEST(RunConfig, DeskScaleDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.model.d_leaf, 64);
  EXPECT_EQ(c.model.d_map, 64);
  EXPECT_EQ(c.train.lr.initial, 1e-3);
  EXPECT_EQ(c.data.grammar, "long_range");
  EXPECT_TRUE(c.class_types.empty());
}

TEST(RunConfig, IniSectionsApply) {
  const auto path = write_temp("ok", "[model]\nd_map = 48\nlayers = primitive,concurrent\nclass_types=body,object\n"
                                     "[train]\nepochs=2\nlr=0.005\noptimizer=sgd\n"
                                     "[data]\ndir=/tmp/x\nexpand_boxes=true\n");
  RunConfig c;
  apply_ini(c, path);
  EXPECT_EQ(c.model.d_map, 48);
  EXPECT_EQ(c.model.layers, LayerSet::up_to_concurrent());
  EXPECT_EQ(c.class_types, (std::vector<InteractiveType>{InteractiveType::body, InteractiveType::object}));
  EXPECT_EQ(c.train.epochs, 2);
  EXPECT_EQ(c.train.lr.initial, 0.005);
  EXPECT_EQ(c.train.optimizer, optim::OptimizerKind::sgd);
  EXPECT_EQ(c.data.dir, "/tmp/x");
  EXPECT_TRUE(c.data.expand_boxes);
  const GcmConfig m = c.model_config({InteractiveType::human});
  EXPECT_EQ(m.n_classes, 2);
  fs::remove(path);
}

TEST(RunConfig, ErrorsAreTyped) {
  RunConfig c;
  EXPECT_THROW(c.set("model.width", "3"), ArgumentError);
  EXPECT_THROW(c.set("nosection", "3"), ArgumentError);
  EXPECT_THROW(c.set("model.d_map", "12x"), ArgumentError);
  EXPECT_THROW(c.set("model.role_identity", "yes"), ArgumentError);
  EXPECT_THROW(c.set("model.layers", "lrci,bogus"), ArgumentError);
  EXPECT_THROW(c.set("model.class_types", "body,vehicle"), ArgumentError);
  EXPECT_THROW(apply_override(c, "no_equals_sign"), ArgumentError);
  EXPECT_THROW(apply_override(c, "=3"), ArgumentError);

  const auto unknown = write_temp("unknown", "[model]\nbogus=1\n");
  EXPECT_THROW(apply_ini(c, unknown), ArgumentError);
  const auto loose = write_temp("loose", "d_map=3\n");
  EXPECT_THROW(apply_ini(c, loose), ArgumentError);
  const auto broken = write_temp("broken", "[model\nd_map=3\n");
  EXPECT_THROW(apply_ini(c, broken), ParseError);
  EXPECT_THROW(apply_ini(c, "/nonexistent/gcm.ini"), IoError);
  for (const auto& p : {unknown, loose, broken}) fs::remove(p);

  c.data.grammar = "fractal";
  EXPECT_THROW(c.grammar_spec(), ArgumentError);
}

TEST(RunConfig, OverridesWinOverFile) {
  const auto path = write_temp("override", "[train]\nepochs=7\n");
  RunConfig c;
  apply_ini(c, path);
  apply_override(c, "train.epochs=9");
  apply_override(c, "data.dir=a=b");
  EXPECT_EQ(c.train.epochs, 9);
  EXPECT_EQ(c.data.dir, "a=b");
  fs::remove(path);
}

TEST(RunConfig, ToIniRoundTrips) {
  RunConfig c;
  c.set("model.d_entity", "24");
  c.set("model.class_types", "human,body");
  c.set("train.lr_later", "0.00012345678901234");
  c.set("data.noise_sigma", "0.125");
  c.set("model.layers", "baseline");
  const auto path = write_temp("roundtrip", c.to_ini());
  RunConfig back;
  apply_ini(back, path);
  EXPECT_EQ(back.to_ini(), c.to_ini());
  EXPECT_EQ(back.train.lr.later, 0.00012345678901234);
  EXPECT_TRUE(back.model.layers.is_baseline());
  fs::remove(path);
}

TEST(RunConfig, GrammarAndLoadOptionsFollowTheConfig) {
  RunConfig c;
  c.set("model.d_leaf", "20");
  c.set("data.grammar", "compositional");
  c.set("data.clips_per_video", "11");
  c.set("data.noise_sigma", "0.1");
  const GrammarSpec s = c.grammar_spec();
  EXPECT_EQ(s.d_leaf, 20);
  EXPECT_EQ(s.n_classes(), 8);
  EXPECT_EQ(s.clips_per_video, 11);
  EXPECT_EQ(s.noise_sigma, 0.1);
  EXPECT_EQ(c.load_options().d_leaf, 20);
}
