// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "socnav/orchestrator.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

constexpr const char* kTinyConfig = R"([data]
train_n = 4
test_n = 3
seed = 5

[model]
d_model = 8
layers = 2
heads = 2
ffn_hidden = 8
experts = 2
max_context = 160

[sft]
epochs = 2
lr = 0.01
batch_size = 4

[rft]
epochs = 1
group_size = 2
batch_size = 4
max_response_len = 4

[moeft]
epochs = 1

[eval]
warmup = 0
max_turn_len = 6
max_action_len = 4
)";

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "socnav");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir.file("tiny.ini")) << kTinyConfig;
    hash = RunConfig::parse(kTinyConfig).hash();
  }

  /// gen-data through eval into `sub`; returns the artifact paths.
  std::vector<std::string> run_all(const std::string& sub) {
    const std::string root = dir.file(sub), cfg = dir.file("tiny.ini"), data = root + "/data";
    std::filesystem::create_directories(root);
    EXPECT_EQ(cli({"gen-data", "--config", cfg, "--out", data}).code, 0);
    EXPECT_EQ(cli({"sft", "--config", cfg, "--data", data, "--out-ckpt", root + "/sft.ckpt"}).code, 0);
    EXPECT_EQ(cli({"rft", "--config", cfg, "--data", data, "--in-ckpt", root + "/sft.ckpt", "--out-ckpt", root + "/rft.ckpt"}).code, 0);
    EXPECT_EQ(cli({"moeft", "--config", cfg, "--data", data, "--in-ckpt", root + "/rft.ckpt", "--out-ckpt", root + "/moeft.ckpt"}).code, 0);
    EXPECT_EQ(cli({"eval", "--config", cfg, "--ckpt", root + "/moeft.ckpt", "--data", data, "--out", root + "/metrics.csv"}).code, 0);
    return {data + "/train.jsonl", data + "/test.jsonl", data + "/config.ini", root + "/sft.ckpt", root + "/sft.ckpt.log.csv",
            root + "/rft.ckpt", root + "/rft.ckpt.log.csv", root + "/moeft.ckpt", root + "/moeft.ckpt.log.csv", root + "/metrics.csv"};
  }

  testing::TempDir dir{"cli"};
  std::string hash;
};

TEST_F(CliPipeline, ArtifactsAreByteIdenticalAndCarryTheConfigHash) {
  const auto a = run_all("a"), b = run_all("b");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string bytes = slurp(a[i]);
    ASSERT_FALSE(bytes.empty()) << a[i];
    EXPECT_EQ(bytes, slurp(b[i])) << a[i];
    EXPECT_NE(bytes.find(hash), std::string::npos) << a[i];
  }
  for (const char* stage : {"sft", "rft", "moeft"}) {
    const Checkpoint ck = load_checkpoint(dir.file(std::string("a/") + stage + ".ckpt"));
    EXPECT_EQ(ck.metadata.at("stage"), stage);
    EXPECT_EQ(ck.metadata.at("config_hash"), hash);
  }
  // Wall-clock data lives in its own file.
  EXPECT_TRUE(std::filesystem::exists(dir.file("a/rft.ckpt.timing.csv")));
}

TEST_F(CliPipeline, ExitCodes) {
  const std::string cfg = dir.file("tiny.ini"), data = dir.file("d");
  EXPECT_EQ(cli({}).code, cli::kUsage);
  EXPECT_EQ(cli({"gen-data", "--out", data, "--train-n", "0"}).code, cli::kUsage);
  EXPECT_EQ(cli({"sft", "--config", cfg}).code, cli::kUsage);
  EXPECT_EQ(cli({"gen-data", "--config", cfg, "--out", data}).code, 0);
  // Refuses to overwrite without --force.
  EXPECT_EQ(cli({"gen-data", "--config", cfg, "--out", data}).code, cli::kValidation);
  EXPECT_EQ(cli({"gen-data", "--config", cfg, "--out", data, "--force"}).code, 0);

  std::ofstream(dir.file("bad.ini")) << "[model]\nexprets = 3\n";
  const Result bad = cli({"sft", "--config", dir.file("bad.ini"), "--data", data, "--out-ckpt", dir.file("x.ckpt")});
  EXPECT_EQ(bad.code, cli::kValidation);
  EXPECT_NE(bad.err.find("model.exprets"), std::string::npos);

  // Stage order: rft needs an sft checkpoint.
  EXPECT_EQ(cli({"rft", "--config", cfg, "--data", data, "--out-ckpt", dir.file("r.ckpt")}).code, cli::kValidation);
  EXPECT_EQ(cli({"sft", "--config", cfg, "--data", data, "--out-ckpt", dir.file("s.ckpt")}).code, 0);
  EXPECT_EQ(cli({"moeft", "--config", cfg, "--data", data, "--in-ckpt", dir.file("s.ckpt"), "--out-ckpt", dir.file("m.ckpt")}).code,
            cli::kValidation);
  EXPECT_EQ(cli({"eval", "--config", cfg, "--ckpt", dir.file("missing.ckpt"), "--data", data, "--out", dir.file("m.csv")}).code,
            cli::kRuntime);
  EXPECT_EQ(cli({"sft", "--config", cfg, "--data", dir.file("nowhere"), "--out-ckpt", dir.file("y.ckpt")}).code,
            cli::kRuntime);
}

TEST_F(CliPipeline, BenchAndSweep) {
  const std::string cfg = dir.file("tiny.ini");
  const Result bench = cli({"bench", "--config", cfg});
  EXPECT_EQ(bench.code, 0) << bench.err;
  EXPECT_NE(bench.out.find("parameters"), std::string::npos);

  const Result sweep = cli({"sweep", "--axis", "reward", "--config", cfg, "--out", dir.file("sweep"), "--parallel", "2"});
  ASSERT_EQ(sweep.code, 0) << sweep.err;
  std::istringstream summary(slurp(dir.file("sweep/summary.csv")));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(summary, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);  // provenance, header, hard / character / ssr
  EXPECT_NE(lines[0].find(hash), std::string::npos);
  EXPECT_EQ(cli({"sweep", "--axis", "depth", "--config", cfg, "--out", dir.file("s2")}).code, cli::kUsage);
}

}  // namespace
}  // namespace socnav
