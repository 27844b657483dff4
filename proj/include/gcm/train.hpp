#pragma once

// Module training on precomputed leaves, multi-label evaluation, and the
// layer-wise ablation runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcm/autodiff.hpp"
#include "gcm/config.hpp"
#include "gcm/data_io.hpp"
#include "gcm/errors.hpp"
#include "gcm/grammar.hpp"
#include "gcm/memory_bank.hpp"
#include "gcm/metrics.hpp"
#include "gcm/optim.hpp"
#include "gcm/parallel.hpp"

namespace gcm {

/// Step schedule: `initial` for the first `switch_after` epochs, `later`
/// afterwards.
struct LrSchedule {
  double initial = 1e-4;
  double later = 6.5e-5;
  int switch_after = 3;

  double at(int epoch) const { return epoch <= switch_after ? initial : later; }
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  optim::OptimizerKind optimizer = optim::OptimizerKind::adam;
  LrSchedule lr;
  std::uint64_t seed = 0;
  double dropout = 0.5;
  double eval_threshold = 0.5;
  int bank_refresh = 1;  // bank refresh passes per epoch
  int val_every = 1;     // epochs between val evaluations; 0 disables
  int log_every = 50;    // steps between loss events
  int threads = 1;       // evaluation / refresh workers

  void validate() const {
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
    if (!(lr.initial >= 0.0) || !(lr.later >= 0.0)) throw ArgumentError("TrainConfig: learning rates must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("TrainConfig: dropout must lie in [0,1)");
    if (bank_refresh < 1) throw ArgumentError("TrainConfig: bank_refresh must be >= 1");
  }
};

struct LogEvent {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_map;
};

inline nlohmann::ordered_json to_json(const LogEvent& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["lr"] = e.lr;
  if (e.val_map) j["val_mAP"] = *e.val_map;
  return j;
}

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, positives = 0;
};

struct EvalReport {
  std::vector<std::optional<double>> class_ap;
  std::optional<double> map;
  std::map<std::string, std::optional<double>> layer_map;  // probe heads by layer name
  std::vector<ClassCounts> counts;
  std::size_t clips = 0;
  // Synthetic-only parse diagnostics; nullopt when no clip qualifies.
  std::optional<double> object_recovery;
  std::optional<double> human_recovery;
  std::optional<double> cue_mass_rate;
  std::size_t object_cases = 0, human_cases = 0, cue_cases = 0;

  /// Mean AP over the given classes (those with positives).
  std::optional<double> subset_map(const std::vector<int>& classes) const {
    std::vector<std::optional<double>> picked;
    for (int c : classes) picked.push_back(class_ap.at(static_cast<std::size_t>(c)));
    return mean_defined(picked);
  }

  bool operator==(const EvalReport&) const = default;
};

inline bool operator==(const ClassCounts& a, const ClassCounts& b) {
  return a.tp == b.tp && a.fp == b.fp && a.fn == b.fn && a.positives == b.positives;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["note"] = "mAP averages AP over classes with at least one positive in the split";
  j["clips"] = r.clips;
  j["mAP"] = opt(r.map);
  auto aps = nlohmann::ordered_json::array();
  for (const auto& a : r.class_ap) aps.push_back(opt(a));
  j["class_ap"] = aps;
  nlohmann::ordered_json layers = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.layer_map) layers[k] = opt(v);
  j["layer_mAP"] = layers;
  auto counts = nlohmann::ordered_json::array();
  for (const auto& c : r.counts) counts.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"positives", c.positives}});
  j["confusion"] = counts;
  j["object_recovery"] = opt(r.object_recovery);
  j["object_cases"] = r.object_cases;
  j["human_recovery"] = opt(r.human_recovery);
  j["human_cases"] = r.human_cases;
  j["cue_mass_rate"] = opt(r.cue_mass_rate);
  j["cue_cases"] = r.cue_cases;
  return j;
}

/// Writes the current S_A of every listed clip into the bank.
inline void refresh_bank(const GcmModel& model, const Dataset& data, const std::vector<std::size_t>& indices,
                         MemoryBank& bank, int threads = 1) {
  if (!model.config().layers.concurrent) return;
  parallel_for(indices.size(), threads, [&](std::size_t k) {
    ad::NoGradGuard guard;
    const FeatureClip& clip = data.clips[indices[k]];
    bank.write(clip.video_id, clip.t, model.concurrent_map(clip));
  });
}

struct EvalOptions {
  double threshold = 0.5;
  int threads = 1;
  bool refresh_bank = true;
  /// Classes whose positives count toward the cue-mass rate; empty = any
  /// clip whose planted cue lies inside the window.
  std::vector<int> long_range_classes;
};

inline EvalReport evaluate(const GcmModel& model, const Dataset& data, const std::vector<std::size_t>& indices,
                           MemoryBank* bank, const EvalOptions& opts = {}) {
  if (indices.empty()) throw ArgumentError("evaluate: empty split");
  const GcmConfig& cfg = model.config();
  const bool lrci = cfg.layers.lrci;
  if (lrci && bank == nullptr) throw ArgumentError("evaluate: long-range model needs a memory bank");
  if (lrci && opts.refresh_bank) refresh_bank(model, data, indices, *bank, opts.threads);

  const std::size_t n = indices.size();
  const auto classes = static_cast<std::size_t>(cfg.n_classes);
  std::vector<std::vector<double>> logits(n), aux_p(n), aux_c(n);
  std::vector<ParseTree> trees(n);
  parallel_for(n, opts.threads, [&](std::size_t k) {
    ad::NoGradGuard guard;
    const FeatureClip& clip = data.clips[indices[k]];
    if (clip.labels.size() != classes) throw DimensionError("evaluate: clip '" + clip.clip_id + "' has wrong label count");
    std::optional<BankView> view;
    if (lrci) view = bank->read_window(clip.video_id, clip.t);
    ForwardResult r = model.forward(clip, view ? &*view : nullptr, ForwardOptions{});
    logits[k].assign(r.logits.data().begin(), r.logits.data().end());
    if (r.aux_primitive) aux_p[k].assign(r.aux_primitive->data().begin(), r.aux_primitive->data().end());
    if (r.aux_concurrent) aux_c[k].assign(r.aux_concurrent->data().begin(), r.aux_concurrent->data().end());
    trees[k] = std::move(r.tree);
  });

  auto per_class_ap = [&](const std::vector<std::vector<double>>& scores) {
    std::vector<std::optional<double>> aps(classes);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t k = 0; k < n; ++k) {
        s[k] = scores[k][c];
        y[k] = data.clips[indices[k]].labels[c];
      }
      aps[c] = average_precision(s, y);
    }
    return aps;
  };

  EvalReport rep;
  rep.clips = n;
  rep.class_ap = per_class_ap(logits);
  rep.map = mean_defined(rep.class_ap);
  if (cfg.layers.concurrent) {
    const auto aps = per_class_ap(aux_p);
    rep.layer_map["primitive"] = mean_defined(aps);
  }
  if (cfg.layers.lrci) {
    const auto aps = per_class_ap(aux_c);
    rep.layer_map["concurrent"] = mean_defined(aps);
  }
  rep.layer_map[cfg.layers.name()] = rep.map;

  const double logit_threshold = std::log(opts.threshold / (1.0 - opts.threshold));
  rep.counts.assign(classes, {});
  std::size_t obj_hits = 0, hum_hits = 0, cue_hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const FeatureClip& clip = data.clips[indices[k]];
    for (std::size_t c = 0; c < classes; ++c) {
      const bool predicted = logits[k][c] > logit_threshold;
      const bool truth = clip.labels[c] != 0;
      auto& cc = rep.counts[c];
      cc.positives += truth;
      cc.tp += predicted && truth;
      cc.fp += predicted && !truth;
      cc.fn += !predicted && truth;
    }
    if (!clip.truth) continue;
    if (const OrRecord* r = trees[k].find(kObjectOr); r && clip.truth->object >= 0) {
      ++rep.object_cases;
      obj_hits += r->argmax_id() == clip.truth->object;
    }
    if (const OrRecord* r = trees[k].find(kHumanOr); r && clip.truth->human >= 0) {
      ++rep.human_cases;
      hum_hits += r->argmax_id() == clip.truth->human;
    }
    if (trees[k].lrci && clip.truth->cue_time) {
      const std::int64_t cue = *clip.truth->cue_time;
      const std::int64_t gap = std::abs(cue - clip.t);
      bool relevant = gap >= 1 && gap <= cfg.t_window;
      if (relevant && !opts.long_range_classes.empty()) {
        relevant = false;
        for (int c : opts.long_range_classes) relevant = relevant || clip.labels[static_cast<std::size_t>(c)];
      }
      if (relevant) {
        ++rep.cue_cases;
        const auto& rec = *trees[k].lrci;
        for (std::size_t s = 0; s < rec.timestamps.size(); ++s)
          if (rec.timestamps[s] == cue && !rec.lambdas.empty() && rec.lambdas[s] > 0.5) ++cue_hits;
      }
    }
  }
  auto rate = [](std::size_t hits, std::size_t cases) -> std::optional<double> {
    if (cases == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(cases);
  };
  rep.object_recovery = rate(obj_hits, rep.object_cases);
  rep.human_recovery = rate(hum_hits, rep.human_cases);
  rep.cue_mass_rate = rate(cue_hits, rep.cue_cases);
  return rep;
}

struct TrainHooks {
  std::function<void(const LogEvent&)> on_event;
  std::function<void(int epoch, const GcmModel&)> on_epoch_end;
};

struct TrainResult {
  std::vector<LogEvent> log;
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

/// Mini-batch training with BCE loss. The bank (required for long-range
/// models) is filled before the first epoch and refreshed `bank_refresh`
/// times per epoch with detached S_A maps of the training clips.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, GcmModel& model, MemoryBank* bank,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  const bool lrci = model.config().layers.lrci;
  if (lrci && bank == nullptr) throw ArgumentError("train: long-range model needs a memory bank");
  if (lrci && bank->d_map() != static_cast<std::size_t>(model.config().d_map)) {
    throw DimensionError("train: bank width differs from the model's d_map");
  }
  const auto train_idx = data.indices(Split::train);
  if (train_idx.empty()) throw ArgumentError("train: empty training split");
  const auto val_idx = data.indices(Split::val);

  std::mt19937_64 rng(cfg.seed);
  optim::Optimizer opt(cfg.optimizer, cfg.lr.at(1));
  nn::ParameterStore& params = model.parameters();
  TrainResult result;
  auto emit = [&](const LogEvent& e) {
    result.log.push_back(e);
    if (hooks.on_event) hooks.on_event(e);
  };
  if (lrci) refresh_bank(model, data, train_idx, *bank, cfg.threads);

  const std::size_t n = train_idx.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (n + batch - 1) / batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_learning_rate(cfg.lr.at(epoch));
    std::vector<std::size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0, window_loss = 0.0;
    std::size_t window_batches = 0;
    std::size_t next_refresh = 1;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const FeatureClip& clip = data.clips[order[k]];
        std::optional<BankView> view;
        if (lrci) view = bank->read_window(clip.video_id, clip.t);
        ForwardResult r = model.forward(clip, view ? &*view : nullptr, {true, cfg.dropout, &rng});
        ad::Value loss = GcmModel::training_loss(r, clip.labels);
        if (!std::isfinite(loss.item())) {
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(result.steps) + ", clip '" + clip.clip_id + "'");
        }
        ad::backward(ad::scalar_mul(loss, 1.0 / static_cast<double>(hi - lo)));
        batch_loss += loss.item();
      }
      opt.step(params);
      ++result.steps;
      batch_loss /= static_cast<double>(hi - lo);
      epoch_loss += batch_loss;
      window_loss += batch_loss;
      ++window_batches;
      if (cfg.log_every > 0 && result.steps % cfg.log_every == 0) {
        emit({result.steps, epoch, window_loss / static_cast<double>(window_batches), opt.learning_rate(), std::nullopt});
        window_loss = 0.0;
        window_batches = 0;
      }
      // Interior refresh points split the epoch into bank_refresh parts.
      if (lrci && next_refresh < static_cast<std::size_t>(cfg.bank_refresh) &&
          (b + 1) * static_cast<std::size_t>(cfg.bank_refresh) >= next_refresh * batches) {
        refresh_bank(model, data, train_idx, *bank, cfg.threads);
        ++next_refresh;
      }
    }
    if (lrci) refresh_bank(model, data, train_idx, *bank, cfg.threads);
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    LogEvent end{result.steps, epoch, result.epoch_loss.back(), opt.learning_rate(), std::nullopt};
    if (cfg.val_every > 0 && epoch % cfg.val_every == 0 && !val_idx.empty()) {
      EvalOptions eo;
      eo.threshold = cfg.eval_threshold;
      eo.threads = cfg.threads;
      end.val_map = evaluate(model, data, val_idx, bank, eo).map;
    }
    emit(end);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
  }
  return result;
}

struct AblationRow {
  std::string name;
  LayerSet layers;
  EvalReport report;
};

/// Table rows in fixed order: baseline, primitive, concurrent, concurrent+LRCI.
/// Every row starts from the same model seed and training seed.
inline std::vector<AblationRow> run_ablation(const Dataset& data, const GcmConfig& base, const TrainConfig& tc,
                                             std::uint64_t model_seed, const EvalOptions& eo = {}) {
  const std::vector<std::pair<std::string, LayerSet>> rows = {
      {"baseline", LayerSet::baseline()},
      {"primitive", LayerSet::primitive_only()},
      {"concurrent", LayerSet::up_to_concurrent()},
      {"concurrent+lrci", LayerSet::full()}};
  const auto val_idx = data.indices(Split::val);
  std::vector<AblationRow> table;
  for (const auto& [name, layers] : rows) {
    GcmConfig cfg = base;
    cfg.layers = layers;
    GcmModel model(cfg, model_seed);
    MemoryBank bank(static_cast<std::size_t>(cfg.d_map), cfg.t_window);
    TrainConfig local = tc;
    local.val_every = 0;
    train(local, data, model, &bank);
    table.push_back({name, layers, evaluate(model, data, val_idx, &bank, eo)});
  }
  return table;
}

}  // namespace gcm
