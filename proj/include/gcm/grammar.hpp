#pragma once

// The grammatical compositional model: entity leaves, primitive-action
// branches (pair And + Or selection), the concurrent-action And node, the
// optional long-range layer, and the root classifier. Inference is a single
// bottom-up pass that also records every Or node's selection for parsing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gcm/autodiff.hpp"
#include "gcm/clip.hpp"
#include "gcm/config.hpp"
#include "gcm/errors.hpp"
#include "gcm/memory_bank.hpp"
#include "gcm/nn.hpp"
#include "gcm/nodes.hpp"

namespace gcm {

struct ForwardOptions {
  bool training = false;
  double dropout = 0.5;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

/// Embedded entities of one clip. Candidate tensors always have
/// n_obj_max / n_hum_max rows; absent rows hold the learned null embedding
/// and are masked out.
struct EntitySet {
  Value actor;    // (d_entity)
  Value objects;  // (n_obj_max, d_entity)
  Value humans;   // (n_hum_max, d_entity)
  std::vector<std::uint8_t> object_mask;
  std::vector<std::uint8_t> human_mask;
  std::vector<int> object_ids;  // index into the clip's list, -1 for padding
  std::vector<int> human_ids;
};

struct OrRecord {
  std::string name;
  std::vector<int> candidate_ids;
  std::vector<double> logits;
  std::vector<double> lambdas;
  std::vector<std::uint8_t> mask;
  int argmax = -1;  // slot index; -1 when every candidate is masked
  bool all_masked = false;

  /// Id of the selected candidate in the clip's list, or -1.
  int argmax_id() const { return argmax < 0 ? -1 : candidate_ids[static_cast<std::size_t>(argmax)]; }
};

/// Trace of one bottom-up inference.
struct ParseTree {
  std::string clip_id;
  int actor_id = 0;
  std::vector<OrRecord> or_nodes;
  std::optional<LrciRecord> lrci;
  std::vector<std::pair<std::string, double>> layer_norms;
  std::vector<double> logits;
  std::vector<int> classes_over_threshold;

  const OrRecord* find(const std::string& name) const {
    for (const auto& r : or_nodes)
      if (r.name == name) return &r;
    return nullptr;
  }
};

struct ScoringMaps {
  Value branch_body;      // S_R of <h,v>
  Value branch_object;    // S_R of <h,v,o>
  Value branch_human;     // S_R of <h,v,h'>
  Value concurrent;       // S_A
  Value concurrent_star;  // S_A* (long-range layer only)
  Value logits;
};

struct ForwardResult {
  ScoringMaps maps;
  ParseTree tree;
  Value logits;
  /// Probe heads on detached lower-layer maps, present when a higher layer
  /// is enabled. Used for per-layer evaluation only.
  std::optional<Value> aux_primitive;
  std::optional<Value> aux_concurrent;
};

struct BranchResult {
  Value map;
  std::optional<OrRecord> record;
};

inline constexpr const char* kObjectOr = "object_interaction";
inline constexpr const char* kHumanOr = "human_interaction";

inline double l2_norm(const Value& v) {
  double s = 0.0;
  for (double x : v.data()) s += x * x;
  return std::sqrt(s);
}

/// Indices of the `cap` most confident candidates, in original order.
inline std::vector<int> top_candidates(const std::vector<Candidate>& cands, int cap) {
  std::vector<int> idx(cands.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (static_cast<int>(idx.size()) > cap) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return cands[a].confidence > cands[b].confidence; });
    idx.resize(static_cast<std::size_t>(cap));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

class GcmModel {
 public:
  GcmModel(GcmConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto leaf = static_cast<std::size_t>(config_.d_leaf);
    const auto ent = static_cast<std::size_t>(config_.d_entity);
    const auto map = static_cast<std::size_t>(config_.d_map);
    const auto classes = static_cast<std::size_t>(config_.n_classes);
    const LayerSet& layers = config_.layers;

    if (layers.is_baseline()) {
      baseline_head_ = nn::Mlp2(params_, "head.baseline", leaf, map, classes, rng);
      return;
    }
    if (config_.role_identity) {
      role_actor_ = params_.create_uniform("role.actor", {leaf}, rng);
      role_object_ = params_.create_uniform("role.object", {leaf}, rng);
      role_human_ = params_.create_uniform("role.human", {leaf}, rng);
    }
    embed_actor_ = nn::Linear(params_, "embed.actor", leaf, ent, rng);
    embed_object_ = nn::Linear(params_, "embed.object", leaf, ent, rng);
    embed_human_ = nn::Linear(params_, "embed.human", leaf, ent, rng);
    null_object_ = params_.create_uniform("null.object", {ent}, rng);
    null_human_ = params_.create_uniform("null.human", {ent}, rng);

    body_and_ = nn::Mlp2(params_, "branch.body.and", ent, map, map, rng);
    object_and_ = nn::Mlp2(params_, "branch.object.and", 2 * ent, map, map, rng);
    object_or_ = nn::Mlp2(params_, "branch.object.or", map, map, 1, rng);
    human_and_ = nn::Mlp2(params_, "branch.human.and", 2 * ent, map, map, rng);
    human_or_ = nn::Mlp2(params_, "branch.human.or", map, map, 1, rng);
    // One primitive head per interactive type; class c is read only from
    // the head of its own type.
    for (std::size_t k = 0; k < 3; ++k) {
      const auto type = static_cast<InteractiveType>(k);
      std::vector<double> mask(classes, 0.0);
      for (std::size_t c = 0; c < classes; ++c) mask[c] = config_.class_types[c] == type ? 1.0 : 0.0;
      if (std::find(mask.begin(), mask.end(), 1.0) == mask.end()) continue;
      primitive_heads_[k] = nn::Mlp2(params_, std::string("head.primitive.") + to_string(type), map, map, classes, rng);
      type_masks_[k] = Value::constant({classes}, std::move(mask));
    }

    if (layers.concurrent) {
      concurrent_and_ = nn::Mlp2(params_, "concurrent.and", 3 * map, map, map, rng);
      root_head_ = nn::Mlp2(params_, "head.root", map, map, classes, rng);
    }
    if (layers.lrci) {
      lrci_or_ = nn::Mlp2(params_, "lrci.or", map, map, 1, rng);
      lrci_and_ = nn::Mlp2(params_, "lrci.and", 2 * map, map, map, rng);
      concurrent_head_ = nn::Mlp2(params_, "head.concurrent", map, map, classes, rng);
    }
  }

  // Copies would alias the same parameter nodes.
  GcmModel(const GcmModel&) = delete;
  GcmModel& operator=(const GcmModel&) = delete;
  GcmModel(GcmModel&&) = default;
  GcmModel& operator=(GcmModel&&) = default;

  const GcmConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  EntitySet embed_entities(const FeatureClip& clip) const {
    require_structured("embed_entities");
    const auto leaf = static_cast<std::size_t>(config_.d_leaf);
    if (clip.actor.size() != leaf) {
      throw DimensionError("actor feature has " + std::to_string(clip.actor.size()) + " values, expected " +
                           std::to_string(leaf));
    }
    EntitySet e;
    e.actor = ad::relu(embed_actor_(with_role(clip.actor, role_actor_)));
    embed_candidates(clip.objects, config_.n_obj_max, embed_object_, null_object_, role_object_, e.objects,
                     e.object_mask, e.object_ids);
    embed_candidates(clip.humans, config_.n_hum_max, embed_human_, null_human_, role_human_, e.humans,
                     e.human_mask, e.human_ids);
    return e;
  }

  /// <h,v> composes the actor alone; <h,v,o> and <h,v,h'> compose the actor
  /// with every candidate and then select among the pair maps.
  BranchResult primitive_branch(const EntitySet& e, InteractiveType kind) const {
    require_structured("primitive_branch");
    if (kind == InteractiveType::body) return {and_compose({e.actor}, body_and_), std::nullopt};
    const bool object = kind == InteractiveType::object;
    const Value& cands = object ? e.objects : e.humans;
    const auto& mask = object ? e.object_mask : e.human_mask;
    const auto& ids = object ? e.object_ids : e.human_ids;
    const Value pairs = and_compose({ad::tile_rows(e.actor, cands.dim(0)), cands}, object ? object_and_ : human_and_);
    OrResult sel = or_select(pairs, mask, object ? object_or_ : human_or_);
    OrRecord rec;
    rec.name = object ? kObjectOr : kHumanOr;
    rec.candidate_ids = ids;
    rec.logits = sel.logits;
    rec.lambdas.assign(sel.lambdas.data().begin(), sel.lambdas.data().end());
    rec.mask = sel.mask;
    rec.argmax = sel.argmax;
    rec.all_masked = sel.all_masked;
    return {sel.output, std::move(rec)};
  }

  Value concurrent_compose(const Value& body, const Value& object, const Value& human) const {
    if (!config_.layers.concurrent) throw StateError("concurrent layer is disabled in this model");
    return and_compose({body, object, human}, concurrent_and_);
  }

  /// Primitive-layer logits: each type's head reads its own branch map and
  /// contributes only the logits of classes of that type.
  Value primitive_logits(const Value& body, const Value& object, const Value& human, const ForwardOptions& opts) const {
    require_structured("primitive_logits");
    const Value* maps[3] = {&body, &object, &human};
    Value logits;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!type_masks_[k].defined()) continue;
      Value part = ad::mul(primitive_heads_[k](apply_dropout(*maps[k], opts)), type_masks_[k]);
      logits = logits.defined() ? ad::add(logits, part) : part;
    }
    return logits;
  }

  /// Root classifier of a concurrent model: dropout on the last
  /// compositional map, then a two-layer perceptron to per-class logits.
  Value classify(const Value& map, const ForwardOptions& opts) const {
    if (!config_.layers.concurrent) throw StateError("classify: concurrent layer is disabled in this model");
    const nn::Mlp2& head = root_head_;
    if (map.rank() != 1 || map.size() != head.in_dim()) {
      throw DimensionError("classify: map width " + std::to_string(map.size()) + ", expected " +
                           std::to_string(head.in_dim()));
    }
    return head(apply_dropout(map, opts));
  }

  /// S_A of a clip, as stored in the memory bank.
  Value concurrent_map(const FeatureClip& clip) const {
    const EntitySet e = embed_entities(clip);
    return concurrent_compose(primitive_branch(e, InteractiveType::body).map,
                              primitive_branch(e, InteractiveType::object).map,
                              primitive_branch(e, InteractiveType::human).map);
  }

  ForwardResult forward(const FeatureClip& clip, const BankView* view, const ForwardOptions& opts) const {
    ForwardResult out;
    out.tree.clip_id = clip.clip_id;
    out.tree.actor_id = clip.actor_id;
    const LayerSet& layers = config_.layers;

    if (layers.is_baseline()) {
      out.logits = baseline_head_(pooled_leaves(clip));
      finish(out);
      return out;
    }

    const EntitySet e = embed_entities(clip);
    BranchResult body = primitive_branch(e, InteractiveType::body);
    BranchResult object = primitive_branch(e, InteractiveType::object);
    BranchResult human = primitive_branch(e, InteractiveType::human);
    out.maps.branch_body = body.map;
    out.maps.branch_object = object.map;
    out.maps.branch_human = human.map;
    out.tree.or_nodes.push_back(std::move(*object.record));
    out.tree.or_nodes.push_back(std::move(*human.record));
    out.tree.layer_norms = {{"branch_body", l2_norm(body.map)},
                            {"branch_object", l2_norm(object.map)},
                            {"branch_human", l2_norm(human.map)}};
    if (!layers.concurrent) {
      out.logits = primitive_logits(body.map, object.map, human.map, opts);
      finish(out);
      return out;
    }
    out.aux_primitive =
        primitive_logits(ad::detach(body.map), ad::detach(object.map), ad::detach(human.map), ForwardOptions{});

    out.maps.concurrent = concurrent_compose(body.map, object.map, human.map);
    out.tree.layer_norms.emplace_back("concurrent", l2_norm(out.maps.concurrent));
    Value top = out.maps.concurrent;

    if (layers.lrci) {
      if (view == nullptr) throw ArgumentError("forward: long-range layer enabled but no bank view given");
      LrciResult lr = lrci_compose(out.maps.concurrent, *view, lrci_or_, lrci_and_);
      out.maps.concurrent_star = lr.output;
      out.tree.lrci = std::move(lr.record);
      out.tree.layer_norms.emplace_back("concurrent_star", l2_norm(lr.output));
      out.aux_concurrent = concurrent_head_(ad::detach(out.maps.concurrent));
      top = lr.output;
    }
    out.logits = classify(top, opts);
    finish(out);
    return out;
  }

  /// BCE on the root logits plus BCE on each probe head.
  static Value training_loss(const ForwardResult& r, std::span<const std::uint8_t> labels) {
    Value loss = ad::bce_multilabel_loss(r.logits, labels);
    if (r.aux_primitive) loss = ad::add(loss, ad::bce_multilabel_loss(*r.aux_primitive, labels));
    if (r.aux_concurrent) loss = ad::add(loss, ad::bce_multilabel_loss(*r.aux_concurrent, labels));
    return loss;
  }

 private:
  void require_structured(const char* what) const {
    if (config_.layers.is_baseline()) throw StateError(std::string(what) + ": baseline model has no grammar nodes");
  }

  Value with_role(const std::vector<double>& leaf, const Value& role) const {
    Value v = Value::vector(leaf);
    return role.defined() ? ad::add(v, role) : v;
  }

  void embed_candidates(const std::vector<Candidate>& cands, int cap, const nn::Linear& embed, const Value& null,
                        const Value& role, Value& out, std::vector<std::uint8_t>& mask,
                        std::vector<int>& ids) const {
    const auto leaf = static_cast<std::size_t>(config_.d_leaf);
    const std::vector<int> keep = top_candidates(cands, cap);
    std::vector<Value> rows;
    rows.reserve(static_cast<std::size_t>(cap));
    for (int i : keep) {
      const auto& f = cands[static_cast<std::size_t>(i)].feature;
      if (f.size() != leaf) {
        throw DimensionError("candidate feature has " + std::to_string(f.size()) + " values, expected " +
                             std::to_string(leaf));
      }
      rows.push_back(ad::relu(embed(with_role(f, role))));
      mask.push_back(1);
      ids.push_back(i);
    }
    while (rows.size() < static_cast<std::size_t>(cap)) {
      rows.push_back(null);
      mask.push_back(0);
      ids.push_back(-1);
    }
    out = ad::stack_rows(rows);
  }

  Value pooled_leaves(const FeatureClip& clip) const {
    const auto leaf = static_cast<std::size_t>(config_.d_leaf);
    std::vector<double> rows(clip.actor.begin(), clip.actor.end());
    std::size_t n = 1;
    if (clip.actor.size() != leaf) throw DimensionError("actor feature has wrong width");
    auto append = [&](const std::vector<Candidate>& cands, int cap) {
      for (int i : top_candidates(cands, cap)) {
        const auto& f = cands[static_cast<std::size_t>(i)].feature;
        if (f.size() != leaf) throw DimensionError("candidate feature has wrong width");
        rows.insert(rows.end(), f.begin(), f.end());
        ++n;
      }
    };
    append(clip.objects, config_.n_obj_max);
    append(clip.humans, config_.n_hum_max);
    return ad::mean_pool(Value::constant({n, leaf}, std::move(rows)));
  }

  Value apply_dropout(const Value& x, const ForwardOptions& opts) const {
    if (!opts.training || opts.dropout == 0.0) return ad::dropout(x, opts.dropout, false, dummy_rng());
    if (opts.rng == nullptr) throw ArgumentError("forward: training mode needs an rng for dropout");
    return ad::dropout(x, opts.dropout, true, *opts.rng);
  }

  static std::mt19937_64& dummy_rng() {
    thread_local std::mt19937_64 rng(0);
    return rng;
  }

  static void finish(ForwardResult& out) {
    out.maps.logits = out.logits;
    out.tree.logits.assign(out.logits.data().begin(), out.logits.data().end());
    for (std::size_t c = 0; c < out.tree.logits.size(); ++c)
      if (ad::stable_sigmoid(out.tree.logits[c]) > 0.5) out.tree.classes_over_threshold.push_back(static_cast<int>(c));
  }

  GcmConfig config_;
  nn::ParameterStore params_;
  Value role_actor_, role_object_, role_human_;
  nn::Linear embed_actor_, embed_object_, embed_human_;
  Value null_object_, null_human_;
  nn::Mlp2 body_and_, object_and_, object_or_, human_and_, human_or_;
  nn::Mlp2 concurrent_and_, lrci_or_, lrci_and_;
  std::array<nn::Mlp2, 3> primitive_heads_;
  std::array<Value, 3> type_masks_;  // 0/1 per class, undefined for types without classes
  nn::Mlp2 concurrent_head_, root_head_, baseline_head_;
};

}  // namespace gcm
