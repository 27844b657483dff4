#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gcm {

/// Normalized box corners, x1 < x2 and y1 < y2 inside [0,1].
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 1.0, y2 = 1.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool valid() const {
    return 0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
  }
  bool operator==(const Box&) const = default;
};

struct Candidate {
  std::vector<double> feature;
  double confidence = 1.0;
  Box box;
};

/// Ground truth planted by the synthetic generator. Indices refer to the
/// clip's candidate lists; -1 means no interacting partner.
struct PlantedTruth {
  int object = -1;
  int human = -1;
  std::optional<std::int64_t> cue_time;

  bool operator==(const PlantedTruth&) const = default;
};

/// One keyframe's grounded leaves for a single actor.
struct FeatureClip {
  std::string clip_id;
  std::string video_id;
  std::int64_t t = 0;
  int actor_id = 0;
  std::vector<double> actor;
  Box actor_box;
  std::vector<Candidate> objects;
  std::vector<Candidate> humans;
  std::vector<std::uint8_t> labels;
  std::optional<PlantedTruth> truth;
};

}  // namespace gcm
