#pragma once

// Parse document: the JSON rendering of a ParseTree.
//
//   {"clip_id", "actor_id",
//    "or_nodes": [{"name", "candidate_ids", "lambdas", "argmax"}],
//    "lrci": {"timestamps", "lambdas"} | null,
//    "logits", "classes_over_threshold"}
//
// Field order is fixed and floats carry 9 significant digits. "argmax" is
// the selected candidate id (lowest index wins ties), or null when every
// candidate was masked.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcm/grammar.hpp"

namespace gcm {

/// Rounds to 9 significant digits; the shortest round-trip rendering of the
/// result is then at most 9 digits long.
inline double round_sig9(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline nlohmann::ordered_json sig9_array(const std::vector<double>& xs) {
  auto arr = nlohmann::ordered_json::array();
  for (double x : xs) arr.push_back(round_sig9(x));
  return arr;
}

inline nlohmann::ordered_json parse_document(const ParseTree& tree) {
  nlohmann::ordered_json doc;
  doc["clip_id"] = tree.clip_id;
  doc["actor_id"] = tree.actor_id;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& r : tree.or_nodes) {
    nlohmann::ordered_json node;
    node["name"] = r.name;
    node["candidate_ids"] = r.candidate_ids;
    node["lambdas"] = sig9_array(r.lambdas);
    if (r.argmax < 0) node["argmax"] = nullptr;
    else node["argmax"] = r.argmax_id();
    nodes.push_back(std::move(node));
  }
  doc["or_nodes"] = std::move(nodes);
  if (tree.lrci) {
    nlohmann::ordered_json lr;
    lr["timestamps"] = tree.lrci->timestamps;
    lr["lambdas"] = sig9_array(tree.lrci->lambdas);
    doc["lrci"] = std::move(lr);
  } else {
    doc["lrci"] = nullptr;
  }
  doc["logits"] = sig9_array(tree.logits);
  doc["classes_over_threshold"] = tree.classes_over_threshold;
  return doc;
}

inline std::string extract_parse(const ParseTree& tree) { return parse_document(tree).dump(); }

}  // namespace gcm
