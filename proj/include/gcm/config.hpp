#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcm/errors.hpp"

namespace gcm {

/// Interactive type of a primitive action: body movement <h,v>,
/// human-object <h,v,o> or human-human <h,v,h'>.
enum class InteractiveType { body, object, human };

inline const char* to_string(InteractiveType t) {
  switch (t) {
    case InteractiveType::body: return "body";
    case InteractiveType::object: return "object";
    case InteractiveType::human: return "human";
  }
  return "body";
}

inline InteractiveType interactive_type_from_string(const std::string& s) {
  if (s == "body") return InteractiveType::body;
  if (s == "object") return InteractiveType::object;
  if (s == "human") return InteractiveType::human;
  throw ArgumentError("unknown interactive type '" + s + "'");
}

/// Which compositional layers sit on top of the entity leaves. No layers at
/// all selects the structure-free baseline classifier.
struct LayerSet {
  bool primitive = true;
  bool concurrent = true;
  bool lrci = true;

  static LayerSet baseline() { return {false, false, false}; }
  static LayerSet primitive_only() { return {true, false, false}; }
  static LayerSet up_to_concurrent() { return {true, true, false}; }
  static LayerSet full() { return {true, true, true}; }

  bool is_baseline() const { return !primitive && !concurrent && !lrci; }
  bool valid_prefix() const { return (!lrci || concurrent) && (!concurrent || primitive); }

  std::string name() const {
    if (is_baseline()) return "baseline";
    std::string s = "primitive";
    if (concurrent) s += ",concurrent";
    if (lrci) s += ",lrci";
    return s;
  }

  static LayerSet parse(const std::string& text) {
    if (text == "baseline" || text.empty()) return baseline();
    LayerSet out{false, false, false};
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find(',', start);
      if (end == std::string::npos) end = text.size();
      const std::string item = text.substr(start, end - start);
      if (item == "primitive") out.primitive = true;
      else if (item == "concurrent") out.concurrent = true;
      else if (item == "lrci") out.lrci = true;
      else throw ArgumentError("unknown layer '" + item + "'");
      start = end + 1;
    }
    return out;
  }

  bool operator==(const LayerSet&) const = default;
};

/// Structure and dimensions of the And-Or graph.
struct GcmConfig {
  int d_leaf = 2304;
  int d_entity = 512;
  int d_map = 1024;
  int n_obj_max = 5;
  int n_hum_max = 5;
  int t_window = 30;
  int n_classes = 80;
  LayerSet layers = LayerSet::full();
  std::vector<InteractiveType> class_types = std::vector<InteractiveType>(80, InteractiveType::body);
  /// Adds a learned per-role vector to each leaf feature before embedding.
  bool role_identity = false;

  void validate() const {
    if (d_leaf <= 0 || d_entity <= 0 || d_map <= 0 || n_obj_max <= 0 || n_hum_max <= 0 || n_classes <= 0) {
      throw ArgumentError("GcmConfig: all dimensions and candidate counts must be positive");
    }
    if (t_window < 0) throw ArgumentError("GcmConfig: t_window must be >= 0");
    if (!layers.valid_prefix()) {
      throw ArgumentError("GcmConfig: layers must be a prefix of primitive,concurrent,lrci");
    }
    if (static_cast<int>(class_types.size()) != n_classes) {
      throw ArgumentError("GcmConfig: " + std::to_string(class_types.size()) + " class types for " +
                          std::to_string(n_classes) + " classes");
    }
  }
};

inline nlohmann::json to_json(const GcmConfig& c) {
  nlohmann::json types = nlohmann::json::array();
  for (auto t : c.class_types) types.push_back(to_string(t));
  return {{"d_leaf", c.d_leaf},       {"d_entity", c.d_entity},   {"d_map", c.d_map},
          {"n_obj_max", c.n_obj_max}, {"n_hum_max", c.n_hum_max}, {"t_window", c.t_window},
          {"n_classes", c.n_classes}, {"layers", c.layers.name()}, {"class_types", types},
          {"role_identity", c.role_identity}};
}

inline GcmConfig gcm_config_from_json(const nlohmann::json& j) {
  GcmConfig c;
  try {
    c.d_leaf = j.at("d_leaf").get<int>();
    c.d_entity = j.at("d_entity").get<int>();
    c.d_map = j.at("d_map").get<int>();
    c.n_obj_max = j.at("n_obj_max").get<int>();
    c.n_hum_max = j.at("n_hum_max").get<int>();
    c.t_window = j.at("t_window").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.layers = LayerSet::parse(j.at("layers").get<std::string>());
    c.class_types.clear();
    for (const auto& t : j.at("class_types")) c.class_types.push_back(interactive_type_from_string(t.get<std::string>()));
    c.role_identity = j.value("role_identity", false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace gcm
