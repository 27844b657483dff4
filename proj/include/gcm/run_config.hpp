#pragma once

// Operator-facing run configuration: a sectioned key/value file
//
//   [model]  d_leaf d_entity d_map n_obj_max n_hum_max t_window layers
//            role_identity class_types
//   [train]  epochs batch_size optimizer lr lr_later lr_switch_after dropout
//            eval_threshold bank_refresh val_every log_every
//   [data]   dir grammar n_videos noise_sigma clips_per_video p_long_range
//            expand_boxes expand_ratio
//
// plus `section.key=value` overrides. Unknown sections or keys are errors.
// Defaults are desk-scale (synthetic 64-d leaves), not full
// backbone widths.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gcm/config.hpp"
#include "gcm/errors.hpp"
#include "gcm/synth.hpp"
#include "gcm/train.hpp"

namespace gcm {

struct DataConfig {
  std::string dir = "data";
  std::string grammar = "long_range";  // synthetic preset for gen-data
  int n_videos = 200;
  double noise_sigma = 0.3;
  int clips_per_video = 61;
  double p_long_range = 0.5;
  bool expand_boxes = false;
  double expand_ratio = 0.2;
};

struct RunConfig {
  GcmConfig model;
  TrainConfig train;
  DataConfig data;
  /// Class types given explicitly; empty means "take them from the data".
  std::vector<InteractiveType> class_types;

  RunConfig() {
    model.d_leaf = 64;
    model.d_entity = 32;
    model.d_map = 64;
    train.lr = {1e-3, 6.5e-4, 3};
    train.epochs = 5;
  }

  void set(const std::string& key, const std::string& value);
  std::string to_ini() const;

  /// Synthetic grammar for gen-data, sized by the model's d_leaf.
  GrammarSpec grammar_spec() const {
    GrammarSpec s;
    if (data.grammar == "compositional") s = compositional_grammar(model.d_leaf);
    else if (data.grammar == "long_range") s = long_range_grammar(model.d_leaf);
    else throw ArgumentError("data.grammar must be 'compositional' or 'long_range', got '" + data.grammar + "'");
    s.noise_sigma = data.noise_sigma;
    s.clips_per_video = data.clips_per_video;
    if (data.grammar == "long_range") s.p_long_range = data.p_long_range;
    s.validate();
    return s;
  }

  LoadOptions load_options() const {
    LoadOptions o;
    o.d_leaf = model.d_leaf;
    o.n_obj_max = model.n_obj_max;
    o.n_hum_max = model.n_hum_max;
    o.expand_boxes = data.expand_boxes;
    o.expand_ratio = data.expand_ratio;
    return o;
  }

  /// Model config with the class vocabulary filled in.
  GcmConfig model_config(const std::vector<InteractiveType>& data_types) const {
    GcmConfig c = model;
    c.class_types = class_types.empty() ? data_types : class_types;
    c.n_classes = static_cast<int>(c.class_types.size());
    c.validate();
    return c;
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ArgumentError("config key '" + key + "': bad number '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ArgumentError("config key '" + key + "': expected true/false, got '" + text + "'");
}

inline std::string join_types(const std::vector<InteractiveType>& types) {
  std::string s;
  for (std::size_t i = 0; i < types.size(); ++i) s += (i ? "," : "") + std::string(to_string(types[i]));
  return s;
}

inline std::vector<InteractiveType> split_types(const std::string& text) {
  std::vector<InteractiveType> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(interactive_type_from_string(item));
  }
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  const auto i = [&](int& field) { field = parse_number<int>(key, value); };
  const auto d = [&](double& field) { field = parse_number<double>(key, value); };
  const std::map<std::string, std::function<void()>> setters = {
      {"model.d_leaf", [&] { i(model.d_leaf); }},
      {"model.d_entity", [&] { i(model.d_entity); }},
      {"model.d_map", [&] { i(model.d_map); }},
      {"model.n_obj_max", [&] { i(model.n_obj_max); }},
      {"model.n_hum_max", [&] { i(model.n_hum_max); }},
      {"model.t_window", [&] { i(model.t_window); }},
      {"model.layers", [&] { model.layers = LayerSet::parse(value); }},
      {"model.role_identity", [&] { model.role_identity = parse_bool(key, value); }},
      {"model.class_types", [&] { class_types = detail::split_types(value); }},
      {"train.epochs", [&] { i(train.epochs); }},
      {"train.batch_size", [&] { i(train.batch_size); }},
      {"train.optimizer", [&] { train.optimizer = optim::optimizer_from_string(value); }},
      {"train.lr", [&] { d(train.lr.initial); }},
      {"train.lr_later", [&] { d(train.lr.later); }},
      {"train.lr_switch_after", [&] { i(train.lr.switch_after); }},
      {"train.dropout", [&] { d(train.dropout); }},
      {"train.eval_threshold", [&] { d(train.eval_threshold); }},
      {"train.bank_refresh", [&] { i(train.bank_refresh); }},
      {"train.val_every", [&] { i(train.val_every); }},
      {"train.log_every", [&] { i(train.log_every); }},
      {"data.dir", [&] { data.dir = value; }},
      {"data.grammar", [&] { data.grammar = value; }},
      {"data.n_videos", [&] { i(data.n_videos); }},
      {"data.noise_sigma", [&] { d(data.noise_sigma); }},
      {"data.clips_per_video", [&] { i(data.clips_per_video); }},
      {"data.p_long_range", [&] { d(data.p_long_range); }},
      {"data.expand_boxes", [&] { data.expand_boxes = parse_bool(key, value); }},
      {"data.expand_ratio", [&] { d(data.expand_ratio); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ArgumentError("unknown config key '" + key + "'");
  it->second();
}

inline std::string RunConfig::to_ini() const {
  std::ostringstream o;
  o.precision(17);
  o << "[model]\n"
    << "d_leaf=" << model.d_leaf << "\nd_entity=" << model.d_entity << "\nd_map=" << model.d_map
    << "\nn_obj_max=" << model.n_obj_max << "\nn_hum_max=" << model.n_hum_max << "\nt_window=" << model.t_window
    << "\nlayers=" << model.layers.name() << "\nrole_identity=" << (model.role_identity ? "true" : "false")
    << "\nclass_types=" << detail::join_types(class_types) << "\n\n[train]\n"
    << "epochs=" << train.epochs << "\nbatch_size=" << train.batch_size
    << "\noptimizer=" << optim::to_string(train.optimizer) << "\nlr=" << train.lr.initial
    << "\nlr_later=" << train.lr.later << "\nlr_switch_after=" << train.lr.switch_after
    << "\ndropout=" << train.dropout << "\neval_threshold=" << train.eval_threshold
    << "\nbank_refresh=" << train.bank_refresh << "\nval_every=" << train.val_every
    << "\nlog_every=" << train.log_every << "\n\n[data]\n"
    << "dir=" << data.dir << "\ngrammar=" << data.grammar << "\nn_videos=" << data.n_videos
    << "\nnoise_sigma=" << data.noise_sigma << "\nclips_per_video=" << data.clips_per_video
    << "\np_long_range=" << data.p_long_range << "\nexpand_boxes=" << (data.expand_boxes ? "true" : "false")
    << "\nexpand_ratio=" << data.expand_ratio << "\n";
  return o.str();
}

/// Applies every key of an INI file on top of `cfg`.
inline void apply_ini(RunConfig& cfg, const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    if (e.line() == 0) throw IoError("cannot read config '" + path + "'");
    throw ParseError("config '" + path + "': " + e.message(), e.line());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ArgumentError("config '" + path + "': key '" + section + "' outside a section");
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
}

/// Applies a `section.key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("override '" + assignment + "' is not key=value");
  cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

}  // namespace gcm
