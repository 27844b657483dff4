#pragma once

// Feature exchange format and synthetic dataset generation.
//
// One clip per JSONL line, fields in this order:
//   {"clip_id", "video_id", "t", "actor": [f64...],
//    "objects": [{"feat": [...], "conf": f, "box": [x1,y1,x2,y2]}...],
//    "humans": [...], "labels": [0/1...], "truth": {...} | null}
// Floats are written with 9 significant digits. A dataset directory holds
// clips.jsonl, grammar.json and manifest.json ({seed, spec_hash, splits}).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcm/checkpoint.hpp"
#include "gcm/clip.hpp"
#include "gcm/errors.hpp"
#include "gcm/grammar.hpp"
#include "gcm/parse.hpp"
#include "gcm/synth.hpp"

namespace gcm {

enum class Split { train, val, all };

/// Clips of many videos plus the video-level train/val partition.
struct Dataset {
  std::vector<FeatureClip> clips;
  std::vector<std::string> train_videos;
  std::vector<std::string> val_videos;

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    if (split == Split::all) {
      out.resize(clips.size());
      for (std::size_t i = 0; i < clips.size(); ++i) out[i] = i;
      return out;
    }
    const auto& ids = split == Split::train ? train_videos : val_videos;
    const std::unordered_set<std::string> wanted(ids.begin(), ids.end());
    for (std::size_t i = 0; i < clips.size(); ++i)
      if (wanted.count(clips[i].video_id)) out.push_back(i);
    return out;
  }

  const FeatureClip* find_clip(const std::string& clip_id) const {
    for (const auto& c : clips)
      if (c.clip_id == clip_id) return &c;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// JSONL records
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json box_json(const Box& b) {
  return nlohmann::ordered_json::array({round_sig9(b.x1), round_sig9(b.y1), round_sig9(b.x2), round_sig9(b.y2)});
}

inline std::string clip_to_jsonl(const FeatureClip& clip) {
  nlohmann::ordered_json j;
  j["clip_id"] = clip.clip_id;
  j["video_id"] = clip.video_id;
  j["t"] = clip.t;
  j["actor"] = sig9_array(clip.actor);
  auto cands = [](const std::vector<Candidate>& cs) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : cs) {
      nlohmann::ordered_json o;
      o["feat"] = sig9_array(c.feature);
      o["conf"] = round_sig9(c.confidence);
      o["box"] = box_json(c.box);
      arr.push_back(std::move(o));
    }
    return arr;
  };
  j["objects"] = cands(clip.objects);
  j["humans"] = cands(clip.humans);
  j["labels"] = clip.labels;
  if (clip.truth) {
    nlohmann::ordered_json t;
    t["object"] = clip.truth->object;
    t["human"] = clip.truth->human;
    if (clip.truth->cue_time) t["cue_time"] = *clip.truth->cue_time;
    else t["cue_time"] = nullptr;
    j["truth"] = std::move(t);
  } else {
    j["truth"] = nullptr;
  }
  return j.dump();
}

struct LoadOptions {
  int d_leaf = 0;     // 0 accepts any width consistent within the file
  int n_obj_max = 5;
  int n_hum_max = 5;
  bool expand_boxes = false;
  double expand_ratio = 0.2;
};

/// Grows a box by `ratio` of its width (height) on each side, clipped to [0,1].
inline Box expand_box(const Box& b, double ratio) {
  const double dx = ratio * b.width(), dy = ratio * b.height();
  return {std::max(0.0, b.x1 - dx), std::max(0.0, b.y1 - dy), std::min(1.0, b.x2 + dx), std::min(1.0, b.y2 + dy)};
}

namespace detail {

inline std::vector<double> read_floats(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string("'") + field + "' must be an array", line);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ParseError(std::string("'") + field + "' must hold numbers", line);
    out.push_back(v.get<double>());
  }
  return out;
}

inline Box read_box(const nlohmann::json& j, std::size_t line) {
  const auto v = read_floats(j, "box", line);
  if (v.size() != 4) throw ParseError("box needs 4 coordinates", line);
  Box b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw ParseError("box outside [0,1] or with x1>=x2 / y1>=y2", line);
  return b;
}

inline std::vector<Candidate> read_candidates(const nlohmann::json& arr, const char* field, int cap,
                                              const LoadOptions& opts, std::size_t line, std::size_t width,
                                              std::vector<int>& kept_ids) {
  if (!arr.is_array()) throw ParseError(std::string("'") + field + "' must be an array", line);
  std::vector<Candidate> all;
  for (const auto& o : arr) {
    if (!o.is_object() || !o.contains("feat") || !o.contains("conf") || !o.contains("box")) {
      throw ParseError(std::string("'") + field + "' entries need feat, conf and box", line);
    }
    Candidate c;
    c.feature = read_floats(o["feat"], "feat", line);
    if (c.feature.size() != width) {
      throw DimensionError("line " + std::to_string(line) + ": candidate feature has " +
                           std::to_string(c.feature.size()) + " values, expected " + std::to_string(width));
    }
    if (!o["conf"].is_number()) throw ParseError("'conf' must be a number", line);
    c.confidence = o["conf"].get<double>();
    if (!(c.confidence >= 0.0 && c.confidence <= 1.0)) throw ParseError("'conf' outside [0,1]", line);
    c.box = read_box(o["box"], line);
    if (opts.expand_boxes) c.box = expand_box(c.box, opts.expand_ratio);
    all.push_back(std::move(c));
  }
  std::vector<Candidate> kept;
  kept_ids = top_candidates(all, cap);
  for (int i : kept_ids) kept.push_back(std::move(all[static_cast<std::size_t>(i)]));
  return kept;
}

}  // namespace detail

/// Parses and validates one JSONL record. Candidate lists are cut to the
/// most confident n_obj_max / n_hum_max entries.
inline FeatureClip clip_from_jsonl(const std::string& text, const LoadOptions& opts, std::size_t line = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);
  for (const char* key : {"clip_id", "video_id", "t", "actor", "objects", "humans", "labels"}) {
    if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  }
  FeatureClip clip;
  if (!j["clip_id"].is_string() || !j["video_id"].is_string()) throw ParseError("ids must be strings", line);
  clip.clip_id = j["clip_id"].get<std::string>();
  clip.video_id = j["video_id"].get<std::string>();
  if (!j["t"].is_number_integer()) throw ParseError("'t' must be an integer", line);
  clip.t = j["t"].get<std::int64_t>();
  clip.actor = detail::read_floats(j["actor"], "actor", line);
  if (opts.d_leaf > 0 && clip.actor.size() != static_cast<std::size_t>(opts.d_leaf)) {
    throw DimensionError("line " + std::to_string(line) + ": actor feature has " + std::to_string(clip.actor.size()) +
                         " values, expected " + std::to_string(opts.d_leaf));
  }
  std::vector<int> object_ids, human_ids;
  const std::size_t n_objects_in = j["objects"].is_array() ? j["objects"].size() : 0;
  const std::size_t n_humans_in = j["humans"].is_array() ? j["humans"].size() : 0;
  clip.objects = detail::read_candidates(j["objects"], "objects", opts.n_obj_max, opts, line, clip.actor.size(),
                                         object_ids);
  clip.humans = detail::read_candidates(j["humans"], "humans", opts.n_hum_max, opts, line, clip.actor.size(),
                                        human_ids);
  if (!j["labels"].is_array()) throw ParseError("'labels' must be an array", line);
  for (const auto& v : j["labels"]) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) throw ParseError("labels must be 0 or 1", line);
    clip.labels.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  if (j.contains("truth") && !j["truth"].is_null()) {
    const auto& t = j["truth"];
    PlantedTruth truth;
    truth.object = t.value("object", -1);
    truth.human = t.value("human", -1);
    if (t.contains("cue_time") && !t["cue_time"].is_null()) truth.cue_time = t["cue_time"].get<std::int64_t>();
    if (truth.object >= static_cast<int>(n_objects_in) || truth.human >= static_cast<int>(n_humans_in)) {
      throw ParseError("truth references a missing candidate", line);
    }
    // Re-index onto the kept candidates; a truncated-away partner becomes -1.
    auto remap = [](int original, const std::vector<int>& kept) {
      for (std::size_t k = 0; k < kept.size(); ++k)
        if (kept[k] == original) return static_cast<int>(k);
      return -1;
    };
    truth.object = truth.object < 0 ? -1 : remap(truth.object, object_ids);
    truth.human = truth.human < 0 ? -1 : remap(truth.human, human_ids);
    clip.truth = truth;
  }
  return clip;
}

/// Streams the clips of a JSONL file to `sink` in file order.
inline void for_each_clip(const std::string& path, const LoadOptions& opts,
                          const std::function<void(FeatureClip&&)>& sink) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file '" + path + "'");
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    sink(clip_from_jsonl(text, opts, line));
  }
}

inline std::vector<FeatureClip> load_feature_file(const std::string& path, const LoadOptions& opts) {
  std::vector<FeatureClip> out;
  for_each_clip(path, opts, [&](FeatureClip&& c) { out.push_back(std::move(c)); });
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

inline std::string video_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "vid%05d", i);
  return buf;
}

/// Videos are sampled from per-video seeds, so any video can be regenerated
/// alone. `n_val` videos, picked by a seeded shuffle, form the val split.
inline Dataset make_synthetic_dataset(const GrammarSpec& spec, int n_videos, int n_val, std::uint64_t seed) {
  if (n_videos < 1 || n_val < 0 || n_val > n_videos) throw ArgumentError("make_synthetic_dataset: bad video counts");
  const Prototypes protos = make_prototypes(spec);
  Dataset ds;
  ds.clips.reserve(static_cast<std::size_t>(n_videos) * static_cast<std::size_t>(spec.clips_per_video));
  for (int v = 0; v < n_videos; ++v) {
    std::seed_seq sequence{seed, static_cast<std::uint64_t>(v), std::uint64_t{0x6763}};
    std::mt19937_64 rng(sequence);
    auto clips = sample_episode(spec, protos, video_name(v), rng);
    for (auto& c : clips) ds.clips.push_back(std::move(c));
  }
  std::vector<int> order(static_cast<std::size_t>(n_videos));
  for (int v = 0; v < n_videos; ++v) order[static_cast<std::size_t>(v)] = v;
  std::mt19937_64 split_rng(seed ^ 0x5eed5eedULL);
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<int> val(order.begin(), order.begin() + n_val), train(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  for (int v : train) ds.train_videos.push_back(video_name(v));
  for (int v : val) ds.val_videos.push_back(video_name(v));
  return ds;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string spec_hash;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::size_t clip_count = 0;
};

inline nlohmann::ordered_json to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["spec_hash"] = m.spec_hash;
  j["splits"] = {{"train", m.train}, {"val", m.val}};
  j["clip_count"] = m.clip_count;
  j["features"] = "clips.jsonl";
  return j;
}

/// Writes clips.jsonl, grammar.json and manifest.json under `dir` with an
/// 80/20 video split. Same (spec, n_videos, seed) gives identical bytes.
inline DatasetManifest generate_dataset(const GrammarSpec& spec, int n_videos, std::uint64_t seed,
                                        const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const int n_val = static_cast<int>(std::lround(0.2 * n_videos));
  const Dataset ds = make_synthetic_dataset(spec, n_videos, n_val, seed);

  std::ofstream out(fs::path(dir) / "clips.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + (fs::path(dir) / "clips.jsonl").string() + "'");
  for (const auto& c : ds.clips) out << clip_to_jsonl(c) << '\n';
  out.close();
  if (!out) throw IoError("write failed for clips.jsonl");

  DatasetManifest m{seed, spec_hash(spec), ds.train_videos, ds.val_videos, ds.clips.size()};
  write_text_file((fs::path(dir) / "grammar.json").string(), to_json(spec).dump(2) + "\n");
  write_text_file((fs::path(dir) / "manifest.json").string(), to_json(m).dump(2) + "\n");
  return m;
}

/// Reads a dataset directory written by generate_dataset (or any directory
/// holding clips.jsonl and a manifest with splits).
inline Dataset load_dataset(const std::string& dir, const LoadOptions& opts) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  try {
    ds.train_videos = manifest.at("splits").at("train").get<std::vector<std::string>>();
    ds.val_videos = manifest.at("splits").at("val").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  const std::string features = manifest.value("features", "clips.jsonl");
  ds.clips = load_feature_file((fs::path(dir) / features).string(), opts);
  return ds;
}

}  // namespace gcm
