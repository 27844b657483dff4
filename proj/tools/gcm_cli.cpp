// gcm: data generation, training, evaluation, parsing, ablation and a
// gradient self-check for the grammatical compositional model.
//
// Exit codes: 0 success, 1 usage, 2 data/schema, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gcm/gcm.hpp"
#include "gcm/run_config.hpp"
#include "gcm/selfcheck.hpp"

#ifndef GCM_VERSION
#define GCM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace gcm;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "gcm_out";
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string clip;
  std::string split = "val";
  std::string bank;
  std::vector<std::string> argv;
};

struct Context {
  Options opt;
  RunConfig cfg;
  std::string config_hash;
};

void write_manifest(const Context& ctx) {
  fs::create_directories(ctx.opt.out);
  nlohmann::ordered_json m;
  m["command"] = ctx.opt.command;
  m["config_hash"] = ctx.config_hash;
  m["seed"] = ctx.opt.seed;
  m["version"] = GCM_VERSION;
  m["threads"] = ctx.cfg.train.threads;
  m["argv"] = ctx.opt.argv;
  m["config"] = "config.ini";
  write_text_file((fs::path(ctx.opt.out) / "run_manifest.json").string(), m.dump(2) + "\n");
  write_text_file((fs::path(ctx.opt.out) / "config.ini").string(), ctx.cfg.to_ini());
}

std::vector<InteractiveType> data_class_types(const RunConfig& cfg) {
  const fs::path grammar = fs::path(cfg.data.dir) / "grammar.json";
  if (!fs::exists(grammar)) {
    if (cfg.class_types.empty()) {
      throw ParseError("dataset '" + cfg.data.dir + "' has no grammar.json; set model.class_types");
    }
    return cfg.class_types;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(grammar.string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("grammar.json: ") + e.what());
  }
  return grammar_spec_from_json(j).class_types();
}

Dataset load_data(const RunConfig& cfg) {
  if (!fs::is_directory(cfg.data.dir)) throw IoError("dataset directory '" + cfg.data.dir + "' not found");
  return load_dataset(cfg.data.dir, cfg.load_options());
}

nlohmann::json checkpoint_meta(const GcmConfig& model, const Context& ctx, int epoch) {
  return {{"model", to_json(model)}, {"epoch", epoch}, {"seed", ctx.opt.seed}, {"config_hash", ctx.config_hash}};
}

GcmModel model_from_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  const auto doc = parse_checkpoint(read_text_file(path));
  GcmConfig cfg;
  try {
    cfg = gcm_config_from_json(doc.at("meta").at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "' has no model config: " + e.what());
  }
  GcmModel model(cfg, 0);
  restore_parameters(doc, model.parameters());
  return model;
}

Split split_from(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "all") return Split::all;
  throw UsageError("--split must be train, val or all");
}

int cmd_gen_data(Context& ctx) {
  const GrammarSpec spec = ctx.cfg.grammar_spec();
  const DatasetManifest m = generate_dataset(spec, ctx.cfg.data.n_videos, ctx.opt.seed, ctx.opt.out);
  write_manifest(ctx);
  std::printf("wrote %zu clips (%zu train / %zu val videos) to %s\n", m.clip_count, m.train.size(), m.val.size(),
              ctx.opt.out.c_str());
  return kOk;
}

int cmd_train(Context& ctx) {
  const Dataset data = load_data(ctx.cfg);
  const GcmConfig model_cfg = ctx.cfg.model_config(data_class_types(ctx.cfg));
  GcmModel model(model_cfg, ctx.opt.seed);
  MemoryBank bank(static_cast<std::size_t>(model_cfg.d_map), model_cfg.t_window);
  TrainConfig tc = ctx.cfg.train;
  tc.seed = ctx.opt.seed;

  write_manifest(ctx);
  const std::string run_id = "run-" + ctx.config_hash.substr(0, 8) + "-s" + std::to_string(ctx.opt.seed);
  const fs::path run_dir = fs::path(ctx.opt.out) / run_id;
  fs::create_directories(run_dir);
  std::ofstream log((fs::path(ctx.opt.out) / "log.jsonl").string(), std::ios::trunc);
  if (!log) throw IoError("cannot write log.jsonl");

  TrainHooks hooks;
  hooks.on_event = [&](const LogEvent& e) {
    log << to_json(e).dump() << '\n' << std::flush;
    std::printf("epoch %d step %lld loss %.6f lr %g%s\n", e.epoch, static_cast<long long>(e.step), e.loss, e.lr,
                e.val_map ? (" val_mAP " + std::to_string(*e.val_map)).c_str() : "");
    std::fflush(stdout);
  };
  std::string last;
  hooks.on_epoch_end = [&](int epoch, const GcmModel& m) {
    last = (run_dir / (std::to_string(epoch) + ".ckpt")).string();
    save_checkpoint(last, m.parameters(), checkpoint_meta(model_cfg, ctx, epoch));
  };
  train(tc, data, model, &bank, hooks);
  if (model_cfg.layers.lrci) bank.save((run_dir / "bank.bin").string());
  std::printf("checkpoint %s\n", last.c_str());
  return kOk;
}

int cmd_eval(Context& ctx) {
  const GcmModel model = model_from_checkpoint(ctx.opt.checkpoint);
  const Dataset data = load_data(ctx.cfg);
  const auto idx = data.indices(split_from(ctx.opt.split));
  const auto& mc = model.config();
  std::optional<MemoryBank> bank;
  EvalOptions eo;
  eo.threshold = ctx.cfg.train.eval_threshold;
  eo.threads = ctx.cfg.train.threads;
  if (!ctx.opt.bank.empty()) {
    bank.emplace(MemoryBank::load(ctx.opt.bank));
    eo.refresh_bank = false;
  } else {
    bank.emplace(static_cast<std::size_t>(mc.d_map), mc.t_window);
  }
  const EvalReport rep = evaluate(model, data, idx, &*bank, eo);
  write_manifest(ctx);
  write_text_file((fs::path(ctx.opt.out) / "report.json").string(), to_json(rep).dump(2) + "\n");
  std::printf("clips %zu mAP %s\n", rep.clips, rep.map ? std::to_string(*rep.map).c_str() : "undefined");
  for (const auto& [layer, v] : rep.layer_map)
    std::printf("  layer %-28s mAP %s\n", layer.c_str(), v ? std::to_string(*v).c_str() : "undefined");
  return kOk;
}

int cmd_parse(Context& ctx) {
  if (ctx.opt.clip.empty()) throw UsageError("parse needs --clip <clip_id>");
  const GcmModel model = model_from_checkpoint(ctx.opt.checkpoint);
  const Dataset data = load_data(ctx.cfg);
  const FeatureClip* clip = data.find_clip(ctx.opt.clip);
  if (clip == nullptr) throw ParseError("clip '" + ctx.opt.clip + "' not in dataset '" + ctx.cfg.data.dir + "'");
  const auto& mc = model.config();
  MemoryBank bank(static_cast<std::size_t>(mc.d_map), mc.t_window);
  std::optional<BankView> view;
  if (mc.layers.lrci) {
    std::vector<std::size_t> same_video;
    for (std::size_t i = 0; i < data.clips.size(); ++i)
      if (data.clips[i].video_id == clip->video_id) same_video.push_back(i);
    refresh_bank(model, data, same_video, bank, ctx.cfg.train.threads);
    view = bank.read_window(clip->video_id, clip->t);
  }
  ad::NoGradGuard guard;
  const ForwardResult r = model.forward(*clip, view ? &*view : nullptr, ForwardOptions{});
  write_manifest(ctx);
  std::cout << extract_parse(r.tree) << '\n';
  return kOk;
}

int cmd_ablate(Context& ctx) {
  const Dataset data = load_data(ctx.cfg);
  const GcmConfig base = ctx.cfg.model_config(data_class_types(ctx.cfg));
  TrainConfig tc = ctx.cfg.train;
  tc.seed = ctx.opt.seed;
  EvalOptions eo;
  eo.threshold = tc.eval_threshold;
  eo.threads = tc.threads;
  const auto table = run_ablation(data, base, tc, ctx.opt.seed, eo);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::printf("%-18s %s\n", "layers", "mAP");
  for (const auto& row : table) {
    rows.push_back({{"name", row.name}, {"layers", row.layers.name()}, {"report", to_json(row.report)}});
    std::printf("%-18s %s\n", row.name.c_str(),
                row.report.map ? std::to_string(*row.report.map).c_str() : "undefined");
  }
  write_manifest(ctx);
  write_text_file((fs::path(ctx.opt.out) / "ablation.json").string(), rows.dump(2) + "\n");
  return kOk;
}

int cmd_gradcheck(Context& ctx) {
  const ModelGradCheck check = model_gradcheck(ctx.opt.seed);
  nlohmann::ordered_json j;
  j["max_rel_error"] = check.report.max_rel_error;
  j["checked"] = check.report.checked;
  for (const auto& e : check.report.entries) {
    j["parameters"][e.name] = {{"max_rel_error", e.max_rel_error}, {"worst_index", e.worst_index},
                               {"analytic", e.worst_analytic}, {"numeric", e.worst_numeric}};
  }
  write_manifest(ctx);
  write_text_file((fs::path(ctx.opt.out) / "gradcheck.json").string(), j.dump(2) + "\n");
  std::printf("checked %zu scalars, max rel-err %.3e\n", check.report.checked, check.report.max_rel_error);
  if (!(check.report.max_rel_error < 1e-4)) {
    std::fprintf(stderr, "gradcheck failed: max rel-err %.3e >= 1e-4\n", check.report.max_rel_error);
    return kNumeric;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grammatical compositional model for concurrent action detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  for (int i = 0; i < argc; ++i) opt.argv.emplace_back(argv[i]);
  app.add_option("--config", opt.config_path, "INI file with [model], [train] and [data] sections");
  app.add_option("--seed", opt.seed, "Seed for data, initialization and shuffling");
  app.add_option("--out", opt.out, "Output directory (manifest, effective config, artifacts)");
  app.add_option("--set", opt.overrides, "Override section.key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset into --out");
  auto* tr = app.add_subcommand("train", "Train on data.dir, writing checkpoints under --out");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split of data.dir");
  ev->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
  ev->add_option("--split", opt.split, "train, val or all");
  ev->add_option("--bank", opt.bank, "Use this bank file instead of refreshing the bank");
  auto* pa = app.add_subcommand("parse", "Print the parse tree of one clip as JSON");
  pa->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
  pa->add_option("--clip", opt.clip, "Clip id")->required();
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the four layer configurations");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter on a small config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  Context ctx;
  try {
    ctx.opt = opt;
    ctx.opt.command = app.get_subcommands().front()->get_name();
    if (!opt.config_path.empty()) {
      if (!fs::is_regular_file(opt.config_path)) {
        std::cerr << app.help() << "\nerror: config file '" << opt.config_path << "' not found\n";
        return kUsage;
      }
      apply_ini(ctx.cfg, opt.config_path);
    }
    for (const auto& o : opt.overrides) apply_override(ctx.cfg, o);
    ctx.cfg.train.threads = default_threads();
    ctx.cfg.train.seed = opt.seed;
    ctx.cfg.train.validate();
    ctx.config_hash = fnv1a_hex(ctx.cfg.to_ini());

    if (*gen) return cmd_gen_data(ctx);
    if (*tr) return cmd_train(ctx);
    if (*ev) return cmd_eval(ctx);
    if (*pa) return cmd_parse(ctx);
    if (*ab) return cmd_ablate(ctx);
    if (*gc) return cmd_gradcheck(ctx);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
