#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "json.hpp"
#include "test_support.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

// Runs the CLI inside `dir` with the given arguments and environment prefix.
RunResult run_cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && env -u PHISHMETRIC_CONFIG " + env + " '" + PM_CLI_PATH +
                          "' " + args + " 2>'" + err_file.string() + "'";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream e(err_file);
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

std::string last_line(const std::string& text) {
  std::string t = text;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto pos = t.rfind('\n');
  return pos == std::string::npos ? t : t.substr(pos + 1);
}

std::string file_sha(const fs::path& p) { return sha256_hex(read_file_bytes(p)); }

const char* kTinyConfig = R"({
  "model": {"pretrained_init": false, "input_size": 32, "width_divisor": 64},
  "train": {"batch_size": 4, "stage1_minibatches": 4, "stage2_query_sets": 1,
            "stage2_repeats_per_query_set": 1, "stage2_minibatches_per_subset": 2,
            "learning_rate": 0.001, "checkpoint_every": 3},
  "manifest": "corp/manifest.tsv", "split": "split.tsv", "seed": 3
})";

// One small corpus, split, trained model and index shared by the tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing_support::fresh_dir("cli");
    std::ofstream(dir_ / "tiny.json") << kTinyConfig;
    const std::string q = " --log-level warn";
    ASSERT_EQ(run_cli(dir_, "ingest --synthetic corp --websites 3 --trusted-per-site 3 --phishing-per-site 2 "
                            "--benign 4" + q).status, 0);
    ASSERT_EQ(run_cli(dir_, "split --manifest corp/manifest.tsv --validation-fraction 0.5 --seed 2 --out split.tsv" + q)
                  .status, 0);
    const auto t = run_cli(dir_, "--config tiny.json train --stage both --out-dir run1" + q);
    ASSERT_EQ(t.status, 0) << t.err;
    ASSERT_EQ(run_cli(dir_, "--config tiny.json index build --checkpoint run1/final.ckpt --out idx.bin" + q).status, 0);
  }

  static fs::path dir_;
};

fs::path CliPipeline::dir_;

TEST(Cli, HelpListsPresetGrids) {
  const auto dir = testing_support::fresh_dir("cli_help");
  const auto r = run_cli(dir, "--help");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("blur:sigma=1.5"), std::string::npos);
  EXPECT_NE(r.out.find("shift:dx=-50,dy=-50"), std::string::npos);
  EXPECT_NE(r.out.find("fgsm:sampling=iterative,step=0.002,steps=5"), std::string::npos);
  for (const char* sub : {"ingest", "split", "dedup", "train", "index", "predict", "evaluate", "robustness", "project"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, UnknownCommandIsOneJsonErrorLine) {
  const auto dir = testing_support::fresh_dir("cli_unknown");
  const auto r = run_cli(dir, "frobnicate");
  EXPECT_NE(r.status, 0);
  const json e = json::parse(last_line(r.err));
  EXPECT_EQ(e.at("error"), "usage");
}

TEST(Cli, BadConfigRejectedBeforeWork) {
  const auto dir = testing_support::fresh_dir("cli_badcfg");
  std::ofstream(dir / "bad.json") << R"({"manifest": "m.tsv", "learning_rat": 1})";
  const auto r = run_cli(dir, "--config bad.json split --out s.tsv");
  EXPECT_NE(r.status, 0);
  const json e = json::parse(last_line(r.err));
  EXPECT_EQ(e.at("error"), "invalid_argument");
  EXPECT_NE(e.at("message").get<std::string>().find("learning_rat"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "s.tsv"));
}

TEST(Cli, MissingInputReportedWithPath) {
  const auto dir = testing_support::fresh_dir("cli_missing");
  const auto r = run_cli(dir, "split --manifest nowhere.tsv --out s.tsv");
  EXPECT_EQ(r.status, 1);
  const json e = json::parse(last_line(r.err));
  EXPECT_EQ(e.at("error"), "io_error");
  EXPECT_NE(e.at("message").get<std::string>().find("nowhere.tsv"), std::string::npos);
}

TEST_F(CliPipeline, LogsAreJsonLines) {
  const auto r = run_cli(dir_, "split --manifest corp/manifest.tsv --out s2.tsv");
  ASSERT_EQ(r.status, 0);
  std::istringstream lines(r.err);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("event"));
    EXPECT_TRUE(j.contains("level"));
    ++n;
  }
  EXPECT_GE(n, 2);
}

TEST_F(CliPipeline, TrainingTwiceGivesIdenticalCheckpoint) {
  const auto r = run_cli(dir_, "--config tiny.json train --stage both --out-dir run2 --log-level warn");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(file_sha(dir_ / "run1" / "final.ckpt"), file_sha(dir_ / "run2" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run1" / "provenance.json"));
  EXPECT_TRUE(fs::exists(dir_ / "run1" / "checkpoints" / "stage1_step3.ckpt"));
  // Four stage-1 and two stage-2 minibatches, one log line each.
  std::ifstream log(dir_ / "run1" / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("loss") && j.contains("lr") && j.contains("minibatch"));
    ++lines;
  }
  EXPECT_EQ(lines, 6);
}

TEST_F(CliPipeline, FlagsOverrideConfigAndEnvironment) {
  const auto a = run_cli(dir_, "split --out env.tsv --log-level warn", "PHISHMETRIC_CONFIG=tiny.json");
  ASSERT_EQ(a.status, 0) << a.err;
  const json prov_a = json::parse(std::ifstream(dir_ / "env.tsv.provenance.json"));
  EXPECT_EQ(prov_a.at("seed"), 3);
  const auto b = run_cli(dir_, "--config tiny.json split --seed 9 --out flag.tsv --log-level warn");
  ASSERT_EQ(b.status, 0) << b.err;
  const json prov_b = json::parse(std::ifstream(dir_ / "flag.tsv.provenance.json"));
  EXPECT_EQ(prov_b.at("seed"), 9);
  EXPECT_NE(prov_a.at("config_sha256"), prov_b.at("config_sha256"));
  EXPECT_TRUE(prov_b.at("inputs").contains("corp/manifest.tsv"));
}

TEST_F(CliPipeline, PredictOnIndexedScreenshotIsExactMatch) {
  std::ifstream manifest(dir_ / "corp" / "manifest.tsv");
  std::string line, image, website;
  while (std::getline(manifest, line)) {
    const auto f = split(line, '\t');
    if (f.size() >= 4 && f[2] == "trusted") {
      website = f[1];
      image = "corp/" + f[3];
      break;
    }
  }
  ASSERT_FALSE(image.empty());
  const auto r = run_cli(dir_, "predict --checkpoint run1/final.ckpt --index idx.bin --image " + image +
                                   " --log-level warn");
  ASSERT_EQ(r.status, 0) << r.err;
  const json p = json::parse(r.out);
  EXPECT_EQ(p.at("website_id"), website);
  EXPECT_EQ(p.at("min_distance").get<double>(), 0.0);
  EXPECT_EQ(p.at("verdict"), "no_threshold");
}

// Top-1 recomputed from the per-record predictions file must equal the
// report's figure.
TEST_F(CliPipeline, EvaluateReportAgreesWithPredictions) {
  const auto r = run_cli(dir_, "--config tiny.json evaluate --checkpoint run1/final.ckpt --index idx.bin "
                               "--out-dir eval --log-level warn");
  ASSERT_EQ(r.status, 0) << r.err;
  const json report = json::parse(std::ifstream(dir_ / "eval" / "report.json"));
  std::ifstream preds(dir_ / "eval" / "predictions.jsonl");
  int phishing = 0, hits = 0, benign = 0;
  for (std::string line; std::getline(preds, line);) {
    const json p = json::parse(line);
    if (p.at("class") == "phishing") {
      ++phishing;
      hits += p.at("top_matches").at(0).at("website_id") == p.at("target");
    } else {
      ++benign;
    }
  }
  ASSERT_GT(phishing, 0);
  EXPECT_EQ(report.at("phishing_count"), phishing);
  EXPECT_EQ(report.at("benign_count"), benign);
  EXPECT_DOUBLE_EQ(report.at("top1_match").get<double>(), static_cast<double>(hits) / phishing);
  EXPECT_TRUE(fs::exists(dir_ / "eval" / "roc.tsv"));
}

TEST_F(CliPipeline, InputsAreNotModified) {
  const std::string before_manifest = file_sha(dir_ / "corp" / "manifest.tsv");
  const std::string before_index = file_sha(dir_ / "idx.bin");
  const auto r = run_cli(dir_, "--config tiny.json index threshold --checkpoint run1/final.ckpt --index idx.bin "
                               "--out idx_tau.bin --log-level warn");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out).contains("threshold"));
  EXPECT_EQ(file_sha(dir_ / "corp" / "manifest.tsv"), before_manifest);
  EXPECT_EQ(file_sha(dir_ / "idx.bin"), before_index);
  EXPECT_NE(file_sha(dir_ / "idx_tau.bin"), before_index);
}

TEST_F(CliPipeline, IndexAddAppendsNewWebsite) {
  // Index built without site02, then extended with it.
  std::ifstream in(dir_ / "corp" / "manifest.tsv");
  std::ofstream out(dir_ / "corp" / "partial.tsv");
  for (std::string line; std::getline(in, line);) {
    const auto f = split(line, '\t');
    if (f.size() >= 2 && f[1] == "site02") continue;
    if (line.rfind("@website\tsite02", 0) == 0) continue;
    out << line << "\n";
  }
  out.close();
  ASSERT_EQ(run_cli(dir_, "--config tiny.json split --manifest corp/partial.tsv --out partial_split.tsv "
                          "--log-level warn").status, 0);
  ASSERT_EQ(run_cli(dir_, "--config tiny.json index build --checkpoint run1/final.ckpt --manifest corp/partial.tsv "
                          "--split partial_split.tsv --out partial.bin --log-level warn").status, 0);
  const auto r = run_cli(dir_, "index add --checkpoint run1/final.ckpt --index partial.bin "
                               "--manifest corp/manifest.tsv --website site02 --out extended.bin --log-level warn");
  ASSERT_EQ(r.status, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("added"), 3);
  const auto dup = run_cli(dir_, "index add --checkpoint run1/final.ckpt --index extended.bin "
                                 "--manifest corp/manifest.tsv --website site02 --out again.bin");
  EXPECT_EQ(dup.status, 1);
  EXPECT_EQ(json::parse(last_line(dup.err)).at("error"), "duplicate_record");
}

TEST_F(CliPipeline, ProjectWritesOneRowPerRecord) {
  const auto r = run_cli(dir_, "project --checkpoint run1/final.ckpt --manifest corp/manifest.tsv --iterations 50 "
                               "--out pts.tsv --log-level error");
  ASSERT_EQ(r.status, 0) << r.err;
  std::ifstream pts(dir_ / "pts.tsv");
  int rows = 0;
  for (std::string line; std::getline(pts, line);) rows += line.rfind('#', 0) != 0;
  EXPECT_EQ(rows, 19);
}

}  // namespace
}  // namespace phishmetric
