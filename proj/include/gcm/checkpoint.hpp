#pragma once

// Checkpoint file: a JSON document
//   {"format": "gcm-checkpoint", "version": 1, "meta": {...},
//    "params": {name: {"shape": [...], "data": [...]}}}
// Doubles are written in shortest round-trip form, so load -> save
// reproduces the file byte for byte and reloads are bitwise exact.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gcm/errors.hpp"
#include "gcm/nn.hpp"

namespace gcm {

inline constexpr const char* kCheckpointFormat = "gcm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const nn::ParameterStore& params,
                                        const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["meta"] = meta;
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [name, v] : params.all()) {
    table[name] = {{"shape", v.shape()},
                   {"data", std::vector<double>(v.data().begin(), v.data().end())}};
  }
  doc["params"] = std::move(table);
  return doc.dump() + "\n";
}

inline nlohmann::json parse_checkpoint(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw ParseError("checkpoint: missing or wrong format tag");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + doc["version"].dump());
  }
  if (!doc.contains("params") || !doc["params"].is_object()) throw ParseError("checkpoint: no params table");
  return doc;
}

/// Copies every parameter of `doc` into `params`. The name sets must match.
inline void restore_parameters(const nlohmann::json& doc, nn::ParameterStore& params) {
  const auto& table = doc.at("params");
  if (table.size() != params.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(table.size()) + " parameters, model has " +
                         std::to_string(params.size()));
  }
  for (const auto& [name, entry] : table.items()) {
    if (!params.contains(name)) throw DimensionError("checkpoint parameter '" + name + "' not in model");
    try {
      const auto shape = entry.at("shape").get<ad::Shape>();
      const auto data = entry.at("data").get<std::vector<double>>();
      params.assign(name, shape, data);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("checkpoint parameter '" + name + "': " + e.what());
    }
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void save_checkpoint(const std::string& path, const nn::ParameterStore& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  write_text_file(path, serialize_checkpoint(params, meta));
}

/// Loads parameters into `params` and returns the checkpoint's meta block.
inline nlohmann::json load_checkpoint(const std::string& path, nn::ParameterStore& params) {
  const auto doc = parse_checkpoint(read_text_file(path));
  restore_parameters(doc, params);
  return doc.value("meta", nlohmann::json::object());
}

}  // namespace gcm
