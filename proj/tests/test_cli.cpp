// Drives the gcm executable end to end through the shell.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gcm/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run(const std::string& args) {
  const fs::path capture = fs::temp_directory_path() / "gcm_cli_stdout.txt";
  const std::string cmd = std::string(GCM_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("gcm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  std::string path(const std::string& rel) const { return (root / rel).string(); }
  fs::path root;
};

const char* kSmall =
    "--set model.d_leaf=16 --set model.d_entity=8 --set model.d_map=12 --set model.t_window=3 "
    "--set data.n_videos=3 --set data.clips_per_video=12 --set train.epochs=1";

std::string find_checkpoint(const fs::path& out) {
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.path().extension() == ".ckpt") return e.path().string();
  return {};
}

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  const CliResult missing = run("--config " + path("absent.ini") + " gradcheck");
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run("--set model.bogus=1 gradcheck --out " + path("o")).code, 1);
  EXPECT_EQ(run("eval").code, 1);  // --checkpoint is required
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, GradcheckPassesAndWritesManifest) {
  const CliResult r = run("--seed 4 --out " + path("gc") + " gradcheck");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = nlohmann::json::parse(gcm::read_text_file(path("gc/gradcheck.json")));
  EXPECT_LT(report["max_rel_error"].get<double>(), 1e-4);
  const auto manifest = nlohmann::json::parse(gcm::read_text_file(path("gc/run_manifest.json")));
  for (const char* key : {"command", "config_hash", "seed", "version", "threads", "argv", "config"})
    EXPECT_TRUE(manifest.contains(key)) << key;
  EXPECT_EQ(manifest["command"], "gradcheck");
  EXPECT_EQ(manifest["seed"], 4);
  EXPECT_TRUE(fs::exists(path("gc/config.ini")));
}

TEST_F(Cli, GenerateTrainEvaluateParse) {
  const std::string data = path("data");
  CliResult r = run(std::string("--seed 1 ") + kSmall + " --out " + data + " gen-data");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"clips.jsonl", "grammar.json", "manifest.json", "run_manifest.json"})
    EXPECT_TRUE(fs::exists(fs::path(data) / f)) << f;
  const std::string clips_before = gcm::read_text_file(data + "/clips.jsonl");

  // The effective config of gen-data feeds straight back in.
  const std::string cfg = data + "/config.ini";
  r = run("--config " + cfg + " --set data.dir=" + data + " --seed 2 --out " + path("train") + " train");
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string ckpt = find_checkpoint(path("train"));
  ASSERT_FALSE(ckpt.empty());
  EXPECT_EQ(fs::path(ckpt).filename(), "1.ckpt");
  EXPECT_TRUE(fs::exists(fs::path(ckpt).parent_path() / "bank.bin"));
  std::ifstream log(path("train/log.jsonl"));
  std::string line, last;
  while (std::getline(log, line)) last = line;
  const auto event = nlohmann::json::parse(last);
  EXPECT_EQ(event["epoch"], 1);
  EXPECT_TRUE(event.contains("val_mAP"));

  r = run("--config " + cfg + " --set data.dir=" + data + " --out " + path("eval") + " eval --checkpoint " + ckpt +
          " --split val");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = nlohmann::json::parse(gcm::read_text_file(path("eval/report.json")));
  EXPECT_EQ(report["clips"], 12);
  EXPECT_TRUE(report["mAP"].is_number());

  r = run("--config " + cfg + " --set data.dir=" + data + " --out " + path("eval2") + " eval --checkpoint " + ckpt +
          " --split val --bank " + (fs::path(ckpt).parent_path() / "bank.bin").string());
  ASSERT_EQ(r.code, 0) << r.out;

  r = run("--config " + cfg + " --set data.dir=" + data + " --out " + path("parse") + " parse --checkpoint " + ckpt +
          " --clip vid00001_t5");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["clip_id"], "vid00001_t5");
  EXPECT_EQ(doc["or_nodes"].size(), 2u);
  EXPECT_EQ(doc["lrci"]["timestamps"].size(), 6u);
  EXPECT_EQ(doc["logits"].size(), 12u);

  // Same invocation, same bytes.
  const CliResult again = run("--config " + cfg + " --set data.dir=" + data + " --out " + path("parse") +
                        " parse --checkpoint " + ckpt + " --clip vid00001_t5");
  EXPECT_EQ(again.out, r.out);

  EXPECT_EQ(run("--config " + cfg + " --set data.dir=" + data + " --out " + path("p") + " parse --checkpoint " + ckpt +
                " --clip nope")
                .code,
            2);
  EXPECT_EQ(run("--config " + cfg + " --set data.dir=" + data + " --out " + path("p") + " eval --checkpoint " +
                path("none.ckpt"))
                .code,
            2);
  EXPECT_EQ(gcm::read_text_file(data + "/clips.jsonl"), clips_before);
}

TEST_F(Cli, MissingDatasetIsDataError) {
  const CliResult r = run("--set data.dir=" + path("nowhere") + " --out " + path("o") + " train");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, DivergentTrainingExitsThree) {
  // A learning rate large enough to overflow the loss.
  const std::string data = path("data");
  ASSERT_EQ(run(std::string("--seed 1 ") + kSmall + " --out " + data + " gen-data").code, 0);
  const CliResult r = run("--config " + data + "/config.ini --set data.dir=" + data +
                    " --set train.optimizer=sgd --set train.lr=1e300 --set train.epochs=2 --out " + path("t") + " train");
  EXPECT_EQ(r.code, 3) << r.out;
}
