#pragma once

// Whole-model gradient check on a small configuration: every parameter of
// the full forward pass (all layers, dropout with a fixed mask, BCE loss)
// against central finite differences.
//
// Probe heads read detached maps, so their loss is not differentiable
// through the layers below by design. They are checked separately: their
// own loss against their own parameters. In the root pass they contribute
// zero on both sides.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gcm/gradcheck.hpp"
#include "gcm/grammar.hpp"
#include "gcm/memory_bank.hpp"

namespace gcm {

inline GcmConfig small_check_config() {
  GcmConfig c;
  c.d_leaf = 16;
  c.d_entity = 8;
  c.d_map = 12;
  c.n_obj_max = 3;
  c.n_hum_max = 3;
  c.t_window = 3;
  c.n_classes = 4;
  c.class_types = {InteractiveType::body, InteractiveType::object, InteractiveType::human, InteractiveType::body};
  c.layers = LayerSet::full();
  return c;
}

/// A random clip at time t with `n_obj` objects and `n_hum` humans.
inline FeatureClip random_clip(const GcmConfig& cfg, int n_obj, int n_hum, std::int64_t t, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto feature = [&] {
    std::vector<double> v(static_cast<std::size_t>(cfg.d_leaf));
    for (double& x : v) x = normal(rng);
    return v;
  };
  FeatureClip clip;
  clip.video_id = "check";
  clip.t = t;
  clip.clip_id = "check_t" + std::to_string(t);
  clip.actor = feature();
  clip.actor_box = {0.1, 0.1, 0.5, 0.9};
  for (int i = 0; i < n_obj; ++i) clip.objects.push_back({feature(), unit(rng), {0.2, 0.2, 0.4, 0.4}});
  for (int i = 0; i < n_hum; ++i) clip.humans.push_back({feature(), unit(rng), {0.5, 0.1, 0.9, 0.9}});
  for (int c = 0; c < cfg.n_classes; ++c) clip.labels.push_back(static_cast<std::uint8_t>(rng() % 2));
  return clip;
}

struct ModelGradCheck {
  ad::GradCheckReport report;
  double loss = 0.0;
};

/// Gradient check of `cfg` (defaults to the small configuration). The bank
/// window holds random constant maps with some slots left empty, and one
/// human slot is padding so the masked path is exercised.
inline ModelGradCheck model_gradcheck(std::uint64_t seed, const GcmConfig& cfg = small_check_config(),
                                      double h = 1e-5) {
  GcmModel model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const FeatureClip clip = random_clip(cfg, cfg.n_obj_max, cfg.n_hum_max - 1, cfg.t_window, rng);
  MemoryBank bank(static_cast<std::size_t>(cfg.d_map), cfg.t_window);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::int64_t t = 0; t <= 2 * cfg.t_window; ++t) {
    if (t == clip.t || t % 3 == 1) continue;
    std::vector<double> map(static_cast<std::size_t>(cfg.d_map));
    for (double& x : map) x = normal(rng);
    bank.write(clip.video_id, t, map);
  }
  const BankView view = bank.read_window(clip.video_id, clip.t);
  const BankView* view_ptr = cfg.layers.lrci ? &view : nullptr;

  const auto forward = [&] {
    std::mt19937_64 mask_rng(seed + 17);
    return model.forward(clip, view_ptr, {true, 0.5, &mask_rng});
  };
  const auto root_loss = [&] { return ad::bce_multilabel_loss(forward().logits, clip.labels); };
  const auto probe_loss = [&] {
    const ForwardResult r = forward();
    Value loss = Value::scalar(0.0);
    if (r.aux_primitive) loss = ad::add(loss, ad::bce_multilabel_loss(*r.aux_primitive, clip.labels));
    if (r.aux_concurrent) loss = ad::add(loss, ad::bce_multilabel_loss(*r.aux_concurrent, clip.labels));
    return loss;
  };

  ModelGradCheck out;
  {
    std::mt19937_64 mask_rng(seed + 17);
    out.loss = GcmModel::training_loss(model.forward(clip, view_ptr, {true, 0.5, &mask_rng}), clip.labels).item();
  }
  out.report = ad::check_gradients(root_loss, model.parameters(), h);

  const ForwardResult probe = forward();
  const bool has_probe = probe.aux_primitive.has_value() || probe.aux_concurrent.has_value();
  if (has_probe) {
    nn::ParameterStore heads = model.parameters().subset([&](const std::string& name) {
      return (probe.aux_primitive && name.starts_with("head.primitive.")) ||
             (probe.aux_concurrent && name.starts_with("head.concurrent."));
    });
    const ad::GradCheckReport probe_report = ad::check_gradients(probe_loss, heads, h);
    for (const auto& e : probe_report.entries) {
      for (auto& mine : out.report.entries) {
        if (mine.name == e.name) mine = e;
      }
    }
    out.report.max_rel_error = 0.0;
    for (const auto& e : out.report.entries) out.report.max_rel_error = std::max(out.report.max_rel_error, e.max_rel_error);
  }
  return out;
}

}  // namespace gcm
