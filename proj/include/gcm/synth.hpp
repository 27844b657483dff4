#pragma once

// Grammar-driven synthetic episodes. Each class owns a generation recipe:
//
//   body        actor gets the class's dynamics prototype
//   object      actor gets the shared "manipulate" prototype; one object
//               candidate is (class identity + engaged state), every other
//               candidate is (another identity + idle state)
//   human       same scheme over the other-human candidates
//   cue         actor gets the cue prototype (one clip per video)
//   long_range  no local evidence; the label holds on every clip within
//               `long_range_radius` seconds of its cue clip
//   composite   no evidence of its own; the label holds exactly when all of
//               its part classes hold (e.g. reading to someone)
//
// Identity is shared between engaged and idle candidates, so the class of
// an interaction can only be read off the candidate that is engaged. That
// makes the Or selection load-bearing rather than decidable by pooling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcm/clip.hpp"
#include "gcm/config.hpp"
#include "gcm/errors.hpp"

namespace gcm {

enum class ClassRole { body, object, human, cue, long_range, composite };

inline const char* to_string(ClassRole r) {
  switch (r) {
    case ClassRole::body: return "body";
    case ClassRole::object: return "object";
    case ClassRole::human: return "human";
    case ClassRole::cue: return "cue";
    case ClassRole::long_range: return "long_range";
    case ClassRole::composite: return "composite";
  }
  return "body";
}

inline ClassRole class_role_from_string(const std::string& s) {
  if (s == "body") return ClassRole::body;
  if (s == "object") return ClassRole::object;
  if (s == "human") return ClassRole::human;
  if (s == "cue") return ClassRole::cue;
  if (s == "long_range") return ClassRole::long_range;
  if (s == "composite") return ClassRole::composite;
  throw ArgumentError("unknown class role '" + s + "'");
}

struct ClassRecipe {
  ClassRecipe() = default;
  ClassRecipe(std::string n, ClassRole r, int cue = -1, std::vector<int> p = {})
      : name(std::move(n)), role(r), cue_class(cue), parts(std::move(p)) {}

  std::string name;
  ClassRole role = ClassRole::body;
  int cue_class = -1;     // long_range only: index of the class whose clip carries the cue
  std::vector<int> parts;  // composite only: classes that must co-occur
};

struct GrammarSpec {
  int d_leaf = 64;
  int clips_per_video = 61;
  int n_objects = 5;
  int n_humans = 5;
  int n_background = 3;      // distractor identities beyond the class identities, per role
  double noise_sigma = 0.3;  // expected norm of the additive Gaussian noise
  double p_object = 0.5;     // per clip
  double p_human = 0.4;      // per clip
  double p_long_range = 0.5; // per video
  int long_range_radius = 30;
  std::uint64_t prototype_seed = 7;
  std::vector<ClassRecipe> vocab;

  int n_classes() const { return static_cast<int>(vocab.size()); }

  std::vector<int> classes_with(ClassRole role) const {
    std::vector<int> out;
    for (int c = 0; c < n_classes(); ++c)
      if (vocab[static_cast<std::size_t>(c)].role == role) out.push_back(c);
    return out;
  }

  /// Branch a class is read from. Cue and long-range classes carry no
  /// partner, so they are tagged as body movements; a composite class takes
  /// the type of its first part.
  std::vector<InteractiveType> class_types() const {
    auto type_of = [](ClassRole role) {
      return role == ClassRole::object  ? InteractiveType::object
             : role == ClassRole::human ? InteractiveType::human
                                        : InteractiveType::body;
    };
    std::vector<InteractiveType> out;
    for (const auto& r : vocab) {
      const bool composite = r.role == ClassRole::composite && !r.parts.empty();
      out.push_back(type_of(composite ? vocab[static_cast<std::size_t>(r.parts.front())].role : r.role));
    }
    return out;
  }

  void validate() const {
    if (d_leaf <= 0 || clips_per_video <= 0 || n_objects < 0 || n_humans < 0 || n_background < 0) {
      throw ArgumentError("GrammarSpec: sizes must be positive");
    }
    if (vocab.empty()) throw ArgumentError("GrammarSpec: empty vocabulary");
    if (noise_sigma < 0.0) throw ArgumentError("GrammarSpec: noise_sigma must be >= 0");
    for (double p : {p_object, p_human, p_long_range})
      if (p < 0.0 || p > 1.0) throw ArgumentError("GrammarSpec: probabilities must lie in [0,1]");
    if (!classes_with(ClassRole::object).empty() && n_objects < 1) {
      throw ArgumentError("GrammarSpec: object classes need at least one object candidate");
    }
    if (!classes_with(ClassRole::human).empty() && n_humans < 1) {
      throw ArgumentError("GrammarSpec: human classes need at least one human candidate");
    }
    for (const auto& r : vocab) {
      if (r.role == ClassRole::long_range) {
        if (r.cue_class < 0 || r.cue_class >= n_classes() ||
            vocab[static_cast<std::size_t>(r.cue_class)].role != ClassRole::cue) {
          throw ArgumentError("GrammarSpec: long-range class '" + r.name + "' needs a cue class");
        }
      }
    }
    for (const auto& r : vocab) {
      if (r.role != ClassRole::composite) continue;
      if (r.parts.empty()) throw ArgumentError("GrammarSpec: composite class '" + r.name + "' has no parts");
      for (int p : r.parts) {
        if (p < 0 || p >= n_classes()) throw ArgumentError("GrammarSpec: composite class '" + r.name + "' has a bad part");
        const ClassRole pr = vocab[static_cast<std::size_t>(p)].role;
        if (pr != ClassRole::body && pr != ClassRole::object && pr != ClassRole::human) {
          throw ArgumentError("GrammarSpec: composite class '" + r.name + "' must be built from primitive classes");
        }
      }
    }
    if (long_range_radius < 1) throw ArgumentError("GrammarSpec: long_range_radius must be >= 1");
  }
};

inline nlohmann::json to_json(const GrammarSpec& s) {
  nlohmann::json vocab = nlohmann::json::array();
  for (const auto& r : s.vocab) {
    vocab.push_back({{"name", r.name}, {"role", to_string(r.role)}, {"cue_class", r.cue_class}, {"parts", r.parts}});
  }
  return {{"d_leaf", s.d_leaf},
          {"clips_per_video", s.clips_per_video},
          {"n_objects", s.n_objects},
          {"n_humans", s.n_humans},
          {"n_background", s.n_background},
          {"noise_sigma", s.noise_sigma},
          {"p_object", s.p_object},
          {"p_human", s.p_human},
          {"p_long_range", s.p_long_range},
          {"long_range_radius", s.long_range_radius},
          {"prototype_seed", s.prototype_seed},
          {"vocab", vocab}};
}

inline GrammarSpec grammar_spec_from_json(const nlohmann::json& j) {
  GrammarSpec s;
  try {
    s.d_leaf = j.at("d_leaf").get<int>();
    s.clips_per_video = j.at("clips_per_video").get<int>();
    s.n_objects = j.at("n_objects").get<int>();
    s.n_humans = j.at("n_humans").get<int>();
    s.n_background = j.at("n_background").get<int>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.p_object = j.at("p_object").get<double>();
    s.p_human = j.at("p_human").get<double>();
    s.p_long_range = j.at("p_long_range").get<double>();
    s.long_range_radius = j.at("long_range_radius").get<int>();
    s.prototype_seed = j.at("prototype_seed").get<std::uint64_t>();
    for (const auto& r : j.at("vocab")) {
      s.vocab.push_back({r.at("name").get<std::string>(), class_role_from_string(r.at("role").get<std::string>()),
                         r.value("cue_class", -1), r.value("parts", std::vector<int>{})});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("grammar spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// FNV-1a over the canonical JSON rendering, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string spec_hash(const GrammarSpec& s) { return fnv1a_hex(to_json(s).dump()); }

/// 3 body / 3 human-object / 2 human-human classes.
inline GrammarSpec compositional_grammar(int d_leaf = 64) {
  GrammarSpec s;
  s.d_leaf = d_leaf;
  s.p_long_range = 0.0;
  s.vocab = {{"stand", ClassRole::body},        {"sit", ClassRole::body},
             {"walk", ClassRole::body},         {"drink_from", ClassRole::object},
             {"read", ClassRole::object},       {"answer_phone", ClassRole::object},
             {"talk_to", ClassRole::human},     {"hand_shake", ClassRole::human}};
  return s;
}

/// Compositional classes plus two cue classes, two long-range classes that
/// are decidable only from their cue clip, and one composite class that is
/// decidable only by combining the object and human branches.
inline GrammarSpec long_range_grammar(int d_leaf = 64) {
  GrammarSpec s;
  s.d_leaf = d_leaf;
  s.vocab = {{"stand", ClassRole::body},
             {"sit", ClassRole::body},
             {"walk", ClassRole::body},
             {"drink_from", ClassRole::object},
             {"read", ClassRole::object},
             {"talk_to", ClassRole::human},
             {"hand_shake", ClassRole::human},
             {"pick_up_cup", ClassRole::cue},
             {"open_door", ClassRole::cue},
             {"give_cup", ClassRole::long_range, 7},
             {"leave_room", ClassRole::long_range, 8},
             {"read_to", ClassRole::composite, -1, {4, 5}}};
  return s;
}

inline double angle_degrees(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

/// Unit prototype vectors derived from a spec's prototype_seed.
struct Prototypes {
  std::vector<std::vector<double>> actor;  // per class; empty for classes without actor evidence
  std::vector<double> actor_object;        // shared by every human-object class
  std::vector<double> actor_human;         // shared by every human-human class
  std::vector<std::vector<double>> object_identity;  // object classes first, then background
  std::vector<std::vector<double>> human_identity;
  std::vector<double> object_engaged, object_idle, human_engaged, human_idle;
  std::vector<int> object_slot;  // class -> identity index, -1 if not an object class
  std::vector<int> human_slot;

  /// Appearance of the engaged partner candidate of class `c`.
  std::vector<double> engaged_prototype(const GrammarSpec& spec, int c) const {
    const auto role = spec.vocab[static_cast<std::size_t>(c)].role;
    const bool obj = role == ClassRole::object;
    if (!obj && role != ClassRole::human) return {};
    const auto& id = obj ? object_identity[static_cast<std::size_t>(object_slot[static_cast<std::size_t>(c)])]
                         : human_identity[static_cast<std::size_t>(human_slot[static_cast<std::size_t>(c)])];
    const auto& state = obj ? object_engaged : human_engaged;
    std::vector<double> v(id.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = id[i] + state[i];
    normalize(v);
    return v;
  }
};

inline Prototypes make_prototypes(const GrammarSpec& spec) {
  spec.validate();
  const auto d = static_cast<std::size_t>(spec.d_leaf);
  std::mt19937_64 rng(spec.prototype_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> all;
  // Rejection-sample unit vectors until every pair is more than 10 degrees apart.
  auto fresh = [&]() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::vector<double> v(d);
      for (double& x : v) x = normal(rng);
      normalize(v);
      bool ok = true;
      for (const auto& u : all) ok = ok && angle_degrees(u, v) > 10.0;
      if (ok) {
        all.push_back(v);
        return v;
      }
    }
    throw ArgumentError("GrammarSpec: d_leaf too small for distinct prototypes");
  };

  Prototypes p;
  p.actor.resize(spec.vocab.size());
  p.object_slot.assign(spec.vocab.size(), -1);
  p.human_slot.assign(spec.vocab.size(), -1);
  p.actor_object = fresh();
  p.actor_human = fresh();
  p.object_engaged = fresh();
  p.object_idle = fresh();
  p.human_engaged = fresh();
  p.human_idle = fresh();
  for (std::size_t c = 0; c < spec.vocab.size(); ++c) {
    switch (spec.vocab[c].role) {
      case ClassRole::body:
      case ClassRole::cue: p.actor[c] = fresh(); break;
      case ClassRole::object:
        p.object_slot[c] = static_cast<int>(p.object_identity.size());
        p.object_identity.push_back(fresh());
        break;
      case ClassRole::human:
        p.human_slot[c] = static_cast<int>(p.human_identity.size());
        p.human_identity.push_back(fresh());
        break;
      case ClassRole::long_range:
      case ClassRole::composite: break;
    }
  }
  for (int b = 0; b < spec.n_background; ++b) {
    p.object_identity.push_back(fresh());
    p.human_identity.push_back(fresh());
  }
  return p;
}

namespace detail {

inline Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 0.1 + 0.4 * u(rng), h = 0.1 + 0.4 * u(rng);
  const double x1 = (1.0 - w) * u(rng), y1 = (1.0 - h) * u(rng);
  return {x1, y1, x1 + w, y1 + h};
}

inline void add_noise(std::vector<double>& v, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma / std::sqrt(static_cast<double>(v.size())));
  for (double& x : v) x += normal(rng);
}

// Candidate list with the engaged partner (if any) at a random slot.
inline std::vector<Candidate> make_candidates(int count, int engaged_identity,
                                              const std::vector<std::vector<double>>& identities,
                                              const std::vector<double>& engaged, const std::vector<double>& idle,
                                              double sigma, std::mt19937_64& rng, int& truth_slot) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  truth_slot = -1;
  if (engaged_identity >= 0) truth_slot = static_cast<int>(rng() % static_cast<std::uint64_t>(count));
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(identities.size()); ++i)
    if (i != engaged_identity) pool.push_back(i);
  if (pool.empty()) throw ArgumentError("GrammarSpec: no distractor identities available");
  std::vector<Candidate> out(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    const bool is_true = s == truth_slot;
    const int id = is_true ? engaged_identity : pool[rng() % pool.size()];
    const auto& state = is_true ? engaged : idle;
    auto& c = out[static_cast<std::size_t>(s)];
    c.feature.resize(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) c.feature[i] = identities[static_cast<std::size_t>(id)][i] + state[i];
    normalize(c.feature);
    add_noise(c.feature, sigma, rng);
    c.confidence = 0.3 + 0.7 * u(rng);
    c.box = random_box(rng);
  }
  return out;
}

}  // namespace detail

/// Samples one video of `clips_per_video` one-second clips.
inline std::vector<FeatureClip> sample_episode(const GrammarSpec& spec, const Prototypes& protos,
                                               const std::string& video_id, std::mt19937_64& rng) {
  const auto body = spec.classes_with(ClassRole::body);
  const auto objects = spec.classes_with(ClassRole::object);
  const auto humans = spec.classes_with(ClassRole::human);
  const auto long_range = spec.classes_with(ClassRole::long_range);
  const auto composites = spec.classes_with(ClassRole::composite);
  const auto d = static_cast<std::size_t>(spec.d_leaf);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  int lr_class = -1;
  std::int64_t cue_time = -1;
  if (!long_range.empty() && u(rng) < spec.p_long_range) {
    lr_class = long_range[rng() % long_range.size()];
    cue_time = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(spec.clips_per_video));
  }

  std::vector<FeatureClip> clips;
  clips.reserve(static_cast<std::size_t>(spec.clips_per_video));
  for (int t = 0; t < spec.clips_per_video; ++t) {
    FeatureClip clip;
    clip.video_id = video_id;
    clip.t = t;
    clip.clip_id = video_id + "_t" + std::to_string(t);
    clip.labels.assign(spec.vocab.size(), 0);
    clip.actor.assign(d, 0.0);
    clip.actor_box = detail::random_box(rng);
    auto add_actor = [&](const std::vector<double>& proto) {
      for (std::size_t i = 0; i < d; ++i) clip.actor[i] += proto[i];
    };

    if (!body.empty()) {
      const int c = body[rng() % body.size()];
      clip.labels[static_cast<std::size_t>(c)] = 1;
      add_actor(protos.actor[static_cast<std::size_t>(c)]);
    }
    int object_class = -1, human_class = -1;
    if (!objects.empty() && u(rng) < spec.p_object) {
      object_class = objects[rng() % objects.size()];
      clip.labels[static_cast<std::size_t>(object_class)] = 1;
      add_actor(protos.actor_object);
    }
    if (!humans.empty() && u(rng) < spec.p_human) {
      human_class = humans[rng() % humans.size()];
      clip.labels[static_cast<std::size_t>(human_class)] = 1;
      add_actor(protos.actor_human);
    }
    if (lr_class >= 0) {
      const int cue = spec.vocab[static_cast<std::size_t>(lr_class)].cue_class;
      const std::int64_t gap = std::abs(t - cue_time);
      if (gap == 0) {
        clip.labels[static_cast<std::size_t>(cue)] = 1;
        add_actor(protos.actor[static_cast<std::size_t>(cue)]);
      } else if (gap <= spec.long_range_radius) {
        clip.labels[static_cast<std::size_t>(lr_class)] = 1;
      }
    }
    for (int c : composites) {
      bool all = true;
      for (int p : spec.vocab[static_cast<std::size_t>(c)].parts) all = all && clip.labels[static_cast<std::size_t>(p)];
      clip.labels[static_cast<std::size_t>(c)] = all ? 1 : 0;
    }
    detail::add_noise(clip.actor, spec.noise_sigma, rng);

    PlantedTruth truth;
    const int obj_id = object_class >= 0 ? protos.object_slot[static_cast<std::size_t>(object_class)] : -1;
    clip.objects = detail::make_candidates(spec.n_objects, obj_id, protos.object_identity,
                                           protos.object_engaged, protos.object_idle, spec.noise_sigma, rng,
                                           truth.object);
    const int hum_id = human_class >= 0 ? protos.human_slot[static_cast<std::size_t>(human_class)] : -1;
    clip.humans = detail::make_candidates(spec.n_humans, hum_id, protos.human_identity,
                                          protos.human_engaged, protos.human_idle, spec.noise_sigma, rng,
                                          truth.human);
    if (lr_class >= 0) truth.cue_time = cue_time;
    clip.truth = truth;
    clips.push_back(std::move(clip));
  }
  return clips;
}

inline std::vector<FeatureClip> sample_episode(const GrammarSpec& spec, const std::string& video_id,
                                               std::mt19937_64& rng) {
  return sample_episode(spec, make_prototypes(spec), video_id, rng);
}

// ---------------------------------------------------------------------------
// Coordinate-only leaves
// ---------------------------------------------------------------------------

/// Per-frame boxes of one entity.
struct BoxTrack {
  std::vector<Box> frames;
};

struct TrackClip {
  std::string clip_id;
  std::string video_id;
  std::int64_t t = 0;
  BoxTrack actor;
  std::vector<BoxTrack> objects;
  std::vector<BoxTrack> humans;
  std::vector<std::uint8_t> labels;
};

/// Flattens a track into (cx, cy, w, h) per frame, zero-padded to d_leaf.
inline std::vector<double> track_feature(const BoxTrack& track, int d_leaf) {
  const std::size_t need = 4 * track.frames.size();
  if (need > static_cast<std::size_t>(d_leaf)) {
    throw ArgumentError("track of " + std::to_string(track.frames.size()) + " frames needs " + std::to_string(need) +
                        " values, leaf width is " + std::to_string(d_leaf));
  }
  std::vector<double> f(static_cast<std::size_t>(d_leaf), 0.0);
  std::size_t i = 0;
  for (const auto& b : track.frames) {
    f[i++] = 0.5 * (b.x1 + b.x2);
    f[i++] = 0.5 * (b.y1 + b.y2);
    f[i++] = b.width();
    f[i++] = b.height();
  }
  return f;
}

/// Leaves built from box coordinates only. Role identity, when wanted, is
/// the model's `role_identity` option.
inline FeatureClip coordinate_mode_features(const TrackClip& tc, int d_leaf) {
  FeatureClip clip;
  clip.clip_id = tc.clip_id;
  clip.video_id = tc.video_id;
  clip.t = tc.t;
  clip.labels = tc.labels;
  clip.actor = track_feature(tc.actor, d_leaf);
  if (!tc.actor.frames.empty()) clip.actor_box = tc.actor.frames.back();
  auto convert = [&](const std::vector<BoxTrack>& tracks, std::vector<Candidate>& out) {
    for (const auto& tr : tracks) {
      Candidate c;
      c.feature = track_feature(tr, d_leaf);
      if (!tr.frames.empty()) c.box = tr.frames.back();
      out.push_back(std::move(c));
    }
  };
  convert(tc.objects, clip.objects);
  convert(tc.humans, clip.humans);
  return clip;
}

/// A box moving horizontally by `step` per frame (positive = right), with
/// small jitter, kept inside the unit square.
inline BoxTrack sample_motion_track(int frames, double step, std::mt19937_64& rng, double jitter = 0.005) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, jitter);
  const double w = 0.1 + 0.1 * u(rng), h = 0.1 + 0.2 * u(rng);
  const double travel = std::abs(step) * frames;
  double x = step >= 0 ? (1.0 - w - travel) * u(rng) : travel + (1.0 - w - travel) * u(rng);
  const double y = (1.0 - h) * u(rng);
  BoxTrack track;
  for (int f = 0; f < frames; ++f) {
    const double x1 = std::clamp(x + n(rng), 0.0, 1.0 - w);
    track.frames.push_back({x1, y, x1 + w, y + h});
    x += step;
  }
  return track;
}

}  // namespace gcm
