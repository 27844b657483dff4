#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gcm/data_io.hpp"

using namespace gcm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gcm_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string record(const std::string& objects, const std::string& extra = "") {
  return R"({"clip_id":"a_t0","video_id":"a","t":0,"actor":[1,2],"objects":)" + objects +
         R"(,"humans":[],"labels":[1,0])" + extra + "}";
}

std::string cand(double conf, double x = 0.1) {
  return R"({"feat":[0.5,0.5],"conf":)" + std::to_string(conf) + R"(,"box":[)" + std::to_string(x) + ",0.1,0.5,0.5]}";
}

}  // namespace

TEST(Jsonl, RoundTripPreservesNineDigits) {
  const Dataset ds = make_synthetic_dataset(long_range_grammar(16), 2, 0, 1);
  for (const auto& c : ds.clips) {
    const std::string line = clip_to_jsonl(c);
    const FeatureClip back = clip_from_jsonl(line, {});
    EXPECT_EQ(clip_to_jsonl(back), line);
    EXPECT_EQ(back.labels, c.labels);
    EXPECT_EQ(back.truth, c.truth);
    for (std::size_t i = 0; i < c.actor.size(); ++i) EXPECT_NEAR(back.actor[i], c.actor[i], 5e-9 * std::abs(c.actor[i]));
  }
}

TEST(Jsonl, FieldOrder) {
  const Dataset ds = make_synthetic_dataset(compositional_grammar(8), 1, 0, 1);
  const auto j = nlohmann::ordered_json::parse(clip_to_jsonl(ds.clips[0]));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"clip_id", "video_id", "t", "actor", "objects", "humans", "labels",
                                            "truth"}));
}

TEST(Jsonl, BoxExpansion) {
  const Box b = expand_box({0.1, 0.1, 0.5, 0.5}, 0.2);
  EXPECT_NEAR(b.x1, 0.02, 1e-15);
  EXPECT_NEAR(b.y1, 0.02, 1e-15);
  EXPECT_NEAR(b.x2, 0.58, 1e-15);
  EXPECT_NEAR(b.y2, 0.58, 1e-15);
  EXPECT_EQ(expand_box({0.0, 0.0, 1.0, 1.0}, 0.2), (Box{0.0, 0.0, 1.0, 1.0}));
  LoadOptions opts;
  opts.expand_boxes = true;
  const FeatureClip clip = clip_from_jsonl(record("[" + cand(0.5) + "]"), opts);
  EXPECT_NEAR(clip.objects[0].box.x1, 0.02, 1e-15);
  EXPECT_EQ(clip_from_jsonl(record("[" + cand(0.5) + "]"), {}).objects[0].box.x1, 0.1);
}

TEST(Jsonl, EmptyCandidatesAreValid) {
  const FeatureClip clip = clip_from_jsonl(record("[]"), {});
  EXPECT_TRUE(clip.objects.empty());
  EXPECT_TRUE(clip.humans.empty());
  EXPECT_FALSE(clip.truth.has_value());
}

TEST(Jsonl, TruncationKeepsMostConfidentAndRemapsTruth) {
  std::string objs = "[";
  const double conf[] = {0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.6};
  for (int i = 0; i < 7; ++i) objs += (i ? "," : "") + cand(conf[i], 0.01 * (i + 1));
  objs += "]";
  const FeatureClip kept = clip_from_jsonl(record(objs, R"(,"truth":{"object":3,"human":-1,"cue_time":null})"), {});
  ASSERT_EQ(kept.objects.size(), 5u);
  // Originals 1, 2, 3, 5, 6 survive in input order.
  const double x[] = {0.02, 0.03, 0.04, 0.06, 0.07};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(kept.objects[i].box.x1, x[i], 1e-12);
  EXPECT_EQ(kept.truth->object, 2);
  const FeatureClip dropped = clip_from_jsonl(record(objs, R"(,"truth":{"object":0,"human":-1,"cue_time":null})"), {});
  EXPECT_EQ(dropped.truth->object, -1);
}

TEST(Jsonl, SchemaErrorsCarryLineNumbers) {
  const std::vector<std::string> bad = {
      "not json",
      R"({"clip_id":"a"})",
      record("[" + cand(1.5) + "]"),
      record(R"([{"feat":[0.5,0.5],"conf":0.5,"box":[0.5,0.1,0.2,0.5]}])"),
      record("[]", R"(,"truth":{"object":4,"human":-1,"cue_time":null})"),
      R"({"clip_id":"a_t0","video_id":"a","t":0,"actor":[1,2],"objects":[],"humans":[],"labels":[2]})",
  };
  for (const auto& text : bad) {
    try {
      clip_from_jsonl(text, {}, 7);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 7u);
      EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos);
    }
  }
}

TEST(Jsonl, WrongLeafWidthIsDimensionError) {
  LoadOptions opts;
  opts.d_leaf = 3;
  EXPECT_THROW(clip_from_jsonl(record("[]"), opts), DimensionError);
  EXPECT_THROW(clip_from_jsonl(record(R"([{"feat":[1],"conf":0.5,"box":[0.1,0.1,0.5,0.5]}])"), {}), DimensionError);
}

TEST(FeatureFile, StreamsAndReportsTheFailingLine) {
  TempDir dir("feature_file");
  const auto path = (dir.path / "clips.jsonl").string();
  {
    std::ofstream out(path);
    out << record("[]") << "\n\n" << record("[]") << "\n{broken\n";
  }
  try {
    load_feature_file(path, {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_THROW(load_feature_file((dir.path / "missing.jsonl").string(), {}), IoError);
}

TEST(GenerateDataset, ByteIdenticalAcrossRunsAndReloadable) {
  TempDir a("gen_a"), b("gen_b");
  const GrammarSpec spec = long_range_grammar(16);
  const DatasetManifest m = generate_dataset(spec, 5, 42, a.path.string());
  generate_dataset(spec, 5, 42, b.path.string());
  for (const char* f : {"clips.jsonl", "grammar.json", "manifest.json"}) {
    EXPECT_EQ(read_text_file((a.path / f).string()), read_text_file((b.path / f).string())) << f;
  }
  EXPECT_EQ(m.clip_count, 305u);
  EXPECT_EQ(m.val.size(), 1u);
  const auto manifest = nlohmann::json::parse(read_text_file((a.path / "manifest.json").string()));
  EXPECT_EQ(manifest["seed"], 42);
  EXPECT_EQ(manifest["spec_hash"], spec_hash(spec));

  LoadOptions opts;
  opts.d_leaf = 16;
  const Dataset ds = load_dataset(a.path.string(), opts);
  EXPECT_EQ(ds.clips.size(), 305u);
  EXPECT_EQ(ds.indices(Split::val).size(), 61u);
  EXPECT_EQ(ds.indices(Split::train).size(), 244u);
  EXPECT_EQ(ds.indices(Split::all).size(), 305u);
  const Dataset mem = make_synthetic_dataset(spec, 5, 1, 42);
  for (std::size_t i = 0; i < ds.clips.size(); ++i) EXPECT_EQ(clip_to_jsonl(ds.clips[i]), clip_to_jsonl(mem.clips[i]));
  ASSERT_NE(ds.find_clip("vid00002_t7"), nullptr);
  EXPECT_EQ(ds.find_clip("vid00002_t7")->t, 7);
  EXPECT_EQ(ds.find_clip("nope"), nullptr);

  const auto grammar = nlohmann::json::parse(read_text_file((a.path / "grammar.json").string()));
  EXPECT_EQ(spec_hash(grammar_spec_from_json(grammar)), spec_hash(spec));
}

TEST(GenerateDataset, BadManifestIsParseError) {
  TempDir dir("bad_manifest");
  write_text_file((dir.path / "manifest.json").string(), "{\"splits\":{}}");
  EXPECT_THROW(load_dataset(dir.path.string(), {}), ParseError);
  EXPECT_THROW(load_dataset((dir.path / "nothing").string(), {}), IoError);
  EXPECT_THROW(make_synthetic_dataset(compositional_grammar(8), 2, 3, 1), ArgumentError);
}
