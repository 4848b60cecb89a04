// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "socnav/config.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

TEST(RunConfig, DefaultsMatchDeskSetting) {
  const RunConfig c;
  EXPECT_EQ(c.data.train_n, 64u);
  EXPECT_EQ(c.data.test_n, 32u);
  EXPECT_EQ(c.model.num_experts, 4u);
  EXPECT_EQ(c.model.top_k, 1u);
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.sft.epochs, 20u);
  EXPECT_EQ(c.sft.batch_size, 8u);
  EXPECT_EQ(c.reward, RewardKind::ssr);
  EXPECT_EQ(c.rft.algorithm, RftAlgorithm::gspo);
  EXPECT_EQ(c.eval.sinkhorn.lambda, 0.1);
  EXPECT_EQ(c.eval.sinkhorn.max_iterations, 1000u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, CanonicalTextRoundTrips) {
  RunConfig c;
  c.seed = 9;
  c.model.num_experts = 3;
  c.rft.kl_beta = 0.125;
  c.reward = RewardKind::character;
  c.turns = navsim::TurnMode::single;
  const RunConfig back = RunConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
}

TEST(RunConfig, HashTracksEveryField) {
  const RunConfig base;
  EXPECT_EQ(base.hash(), RunConfig{}.hash());
  RunConfig c = base;
  c.rft.lr *= 2.0;
  EXPECT_NE(c.hash(), base.hash());
  c = base;
  c.embedder_seed += 1;
  EXPECT_NE(c.hash(), base.hash());
  c = base;
  c.eval.warmup = 0;
  EXPECT_NE(c.hash(), base.hash());
}

TEST(RunConfig, PartialFilesOverrideDefaults) {
  const RunConfig c = RunConfig::parse("; comment\n[model]\nexperts = 2\ntop_k = 2\n\n[rft]\nreward = hard\nkl_beta = 0\n");
  EXPECT_EQ(c.model.num_experts, 2u);
  EXPECT_EQ(c.model.top_k, 2u);
  EXPECT_EQ(c.reward, RewardKind::hard);
  EXPECT_EQ(c.rft.kl_beta, 0.0);
  EXPECT_EQ(c.sft.epochs, RunConfig{}.sft.epochs);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(RunConfig::parse("[model]\nexprets = 2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\nexperts = two\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\nexperts = -2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\nexperts = 2\ntop_k = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[sft]\nlr = 0\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[sft]\nlr = nan\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[rft]\nreward = bleu\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[run]\nturns = both\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[data]\naugment = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model\nexperts = 2\n"), ConfigError);
  try {
    RunConfig::parse("[rft]\nbeta = 1\n", "my.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("rft.beta"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("my.ini"), std::string::npos);
  }
  EXPECT_THROW(RunConfig::from_file("/nonexistent/run.ini"), IoError);
}

TEST(RunConfig, StagePlans) {
  RunConfig c;
  c.turns = navsim::TurnMode::single;
  EXPECT_EQ(c.plan(Stage::sft).turns, navsim::TurnMode::single);
  EXPECT_EQ(c.plan(Stage::moeft).turns, navsim::TurnMode::multi);
  EXPECT_EQ(c.plan(Stage::moeft).lr, c.moeft.lr);
}

TEST(RunConfig, ShippedDefaultFileMatchesBuiltInDefaults) {
  const RunConfig c = RunConfig::from_file(SOCNAV_SOURCE_DIR "/configs/default.ini");
  EXPECT_EQ(c.to_text(), RunConfig{}.to_text());
}

TEST(RunConfig, LexiconPathSelectsEmbedder) {
  testing::TempDir dir("config");
  {
    std::ofstream out(dir.file("lex.tsv"));
    out << "go\tmove\n";
  }
  RunConfig c;
  EXPECT_GT(make_embedder(c)->lexicon().size(), 40u);
  c.lexicon = dir.file("lex.tsv");
  EXPECT_EQ(make_embedder(c)->lexicon().size(), 1u);
}

}  // namespace
}  // namespace socnav
