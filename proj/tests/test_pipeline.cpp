// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "socnav/metrics.hpp"
#include "socnav/pipeline.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

using navsim::TurnMode;

const Vocabulary& vocab() {
  static const Vocabulary v = navsim::navigation_vocabulary();
  return v;
}

ModelConfig small_config(std::size_t experts = 2, bool moe = true) {
  ModelConfig c;
  c.vocab_size = vocab().size();
  c.d_model = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_hidden = 16;
  c.num_experts = experts;
  c.top_k = 1;
  c.max_context = 128;
  c.moe = moe;
  c.init_seed = 5;
  return c;
}

std::vector<navsim::Record> few_records(std::size_t n, std::uint64_t seed = 3) { return navsim::build_dataset(n, 1, seed).train; }

StagePlan plan(Stage stage, std::size_t epochs, double lr, TurnMode turns = TurnMode::multi) {
  StagePlan p;
  p.stage = stage;
  p.epochs = epochs;
  p.lr = lr;
  p.batch_size = 4;
  p.turns = turns;
  return p;
}

std::vector<double> losses(const SupervisedReport& r) {
  std::vector<double> out;
  for (const auto& e : r.epochs) out.push_back(e.mean_loss);
  return out;
}

TEST(SftLoss, UniformModelGivesTokensTimesLogVocab) {
  Weights w = Weights::initialize(small_config(), false);
  for (auto& [name, t] : w.registry()) {
    if (name.starts_with("head.")) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  for (const auto& r : few_records(4)) {
    const auto enc = navsim::encode_conversation(vocab(), r.conversation);
    const double n = static_cast<double>(enc.response_tokens());
    EXPECT_NEAR(sft_loss(w, enc).item(), n * std::log(static_cast<double>(vocab().size())), 1e-10);
  }
}

TEST(SftLoss, MaskingMatchesPerPositionOracle) {
  const Weights w = Weights::initialize(small_config(), false);
  const auto enc = navsim::encode_conversation(vocab(), few_records(1)[0].conversation);
  // Per-position NLL from the full logit matrix.
  const Tensor logits = forward(w, enc.tokens);
  const std::size_t v = vocab().size();
  std::vector<double> nll(enc.tokens.size(), 0.0);
  for (std::size_t t = 1; t < enc.tokens.size(); ++t) {
    const double* row = logits.data().data() + (t - 1) * v;
    double m = row[0];
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
    nll[t] = m + std::log(z) - row[enc.tokens[t]];
  }
  auto oracle = [&](const std::vector<bool>& mask) {
    double s = 0.0;
    for (std::size_t t = 1; t < mask.size(); ++t) s += mask[t] ? nll[t] : 0.0;
    return s;
  };
  EXPECT_NEAR(sft_loss(w, enc).item(), oracle(enc.target_mask), 1e-10);
  for (std::size_t t = 1; t < enc.tokens.size(); t += 3) {
    auto mask = enc.target_mask;
    mask[t] = !mask[t];
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) continue;
    const double got = masked_nll(w, enc.tokens, mask).item();
    EXPECT_NEAR(got, oracle(mask), 1e-10) << t;
    EXPECT_NE(got, sft_loss(w, enc).item()) << t;
  }
  auto bad = enc.target_mask;
  bad[0] = true;
  EXPECT_THROW(masked_nll(w, enc.tokens, bad), ContractError);
  EXPECT_THROW(masked_nll(w, enc.tokens, std::vector<bool>(enc.tokens.size(), false)), ContractError);
}

TEST(SftLoss, PromptRowsGetNoLossGradient) {
  // Only the hidden rows feeding supervised targets receive gradient from the
  // head: the head bias gradient equals the summed softmax-minus-onehot over
  // those rows, which an all-prompt row set would leave at zero.
  const Weights w = Weights::initialize(small_config(), true);
  const auto enc = navsim::encode_conversation(vocab(), few_records(1)[0].conversation);
  ad::backward(sft_loss(w, enc));
  const Tensor logits = forward(w.clone(false), enc.tokens);
  const std::size_t v = vocab().size();
  std::vector<double> expect(v, 0.0);
  for (std::size_t t = 1; t < enc.tokens.size(); ++t) {
    if (!enc.target_mask[t]) continue;
    const double* row = logits.data().data() + (t - 1) * v;
    double m = row[0], z = 0.0;
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < v; ++j) expect[j] += std::exp(row[j] - m) / z - (j == enc.tokens[t] ? 1.0 : 0.0);
  }
  for (std::size_t j = 0; j < v; ++j) EXPECT_NEAR(w.head_b.grad()[j], expect[j], 1e-10);
}

TEST(Sft, LossHalvesAndRunsAreReproducible) {
  const auto records = few_records(8);
  auto run = [&] {
    PolicyModel m(small_config());
    Rng rng(11);
    std::ostringstream log;
    const auto report = run_sft(m, records, vocab(), plan(Stage::sft, 8, 1e-2), rng, &log);
    return std::make_tuple(losses(report), log.str(), serialize_checkpoint(m.weights(), {{"stage", "sft"}}));
  };
  const auto [a_loss, a_log, a_ckpt] = run();
  const auto [b_loss, b_log, b_ckpt] = run();
  ASSERT_EQ(a_loss.size(), 8u);
  EXPECT_LT(a_loss.back(), 0.5 * a_loss.front());
  EXPECT_EQ(a_log, b_log);
  EXPECT_EQ(a_ckpt, b_ckpt);
  std::istringstream lines(a_log);
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "epoch,mean_loss");
}

TEST(Sft, RejectsInvalidPlans) {
  PolicyModel m(small_config());
  Rng rng(1);
  EXPECT_THROW(run_sft(m, few_records(2), vocab(), plan(Stage::sft, 0, 1e-3), rng), ConfigError);
  EXPECT_THROW(run_sft(m, {}, vocab(), plan(Stage::sft, 1, 1e-3), rng), ContractError);
}

TEST(MoeFt, HistogramAccountsForEveryRoutedToken) {
  PolicyModel m(small_config(3));
  Rng rng(2);
  std::ostringstream log;
  const auto report = run_moeft(m, few_records(6), vocab(), plan(Stage::moeft, 3, 3e-3), rng, &log);
  std::size_t tokens = 0;
  for (const auto& r : few_records(6)) tokens += navsim::encode_conversation(vocab(), r.conversation).tokens.size() - 1;
  for (const auto& e : report.epochs) {
    // One MoE block in a two-layer model, top-1 routing.
    ASSERT_EQ(e.expert_histogram.size(), 1u);
    std::size_t sum = 0;
    for (std::size_t c : e.expert_histogram[0]) sum += c;
    EXPECT_EQ(sum, e.routed_tokens);
    EXPECT_EQ(e.routed_tokens, tokens);
  }
  EXPECT_LT(report.epochs.back().mean_loss, report.epochs.front().mean_loss);
  EXPECT_NE(log.str().find("epoch,mean_loss,routed_tokens,expert_histogram\n"), std::string::npos);
}

TEST(MoeFt, RequiresMoeLayers) {
  PolicyModel dense(small_config(1, false));
  Rng rng(2);
  EXPECT_THROW(run_moeft(dense, few_records(2), vocab(), plan(Stage::moeft, 1, 1e-3), rng), ConfigError);
}

TEST(MoeFt, SingleExpertReproducesDenseSft) {
  const auto records = few_records(6);
  PolicyModel moe(small_config(1, true)), dense(small_config(1, false));
  Rng a(4), b(4);
  const auto moe_report = run_moeft(moe, records, vocab(), plan(Stage::moeft, 4, 3e-3), a);
  const auto dense_report = run_sft(dense, records, vocab(), plan(Stage::sft, 4, 3e-3), b);
  EXPECT_EQ(losses(moe_report), losses(dense_report));
}

TEST(Rft, LogHasOneRowPerStep) {
  PolicyModel m(small_config());
  RftConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.group_size = 3;
  cfg.max_response_len = 4;
  cfg.lr = 1e-3;
  Rng rng(8);
  std::ostringstream log, timing;
  const auto report = run_rft(m, few_records(7), vocab(), cfg, RewardSpec{RewardKind::character, nullptr}, TurnMode::multi, rng, &log, &timing);
  EXPECT_EQ(report.steps_per_epoch, 3u);
  EXPECT_EQ(report.steps.size(), 6u);
  const auto rows = [](const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) - 1; };
  EXPECT_EQ(rows(log.str()), report.steps_per_epoch * cfg.epochs);
  EXPECT_EQ(rows(timing.str()), report.steps_per_epoch * cfg.epochs);
  // Wall-clock values stay out of the step log.
  EXPECT_EQ(log.str().find("wall"), std::string::npos);
}

TEST(Rft, HardRewardOnPerfectModelIsAFixedPoint) {
  // Fit a handful of records until greedy decoding is exact, then sample
  // near-greedily: every rollout earns 1, advantages vanish, nothing moves.
  const auto records = few_records(3, 21);
  PolicyModel m(small_config());
  Rng rng(6);
  run_sft(m, records, vocab(), plan(Stage::sft, 60, 1e-2, TurnMode::single), rng);
  for (const auto& r : records) {
    ASSERT_EQ(generate_action(m.weights(), vocab(), r.conversation, TurnMode::single).action, r.action) << r.id;
  }
  const std::string before = serialize_checkpoint(m.weights(), {});
  RftConfig cfg;
  cfg.epochs = 2;
  cfg.group_size = 4;
  cfg.temperature = 0.02;
  cfg.lr = 0.1;
  const auto report = run_rft(m, records, vocab(), cfg, RewardSpec{RewardKind::hard, nullptr}, TurnMode::single, rng);
  for (const auto& s : report.steps) {
    EXPECT_EQ(s.mean_reward, 1.0);
    EXPECT_EQ(s.grad_norm, 0.0);
  }
  EXPECT_EQ(serialize_checkpoint(m.weights(), {}), before);
}

TEST(Stages, OrderAndNames) {
  EXPECT_EQ(required_predecessor(Stage::rft), Stage::sft);
  EXPECT_EQ(required_predecessor(Stage::moeft), Stage::rft);
  EXPECT_EQ(required_predecessor(Stage::sft), Stage::init);
  for (Stage s : {Stage::init, Stage::sft, Stage::rft, Stage::moeft}) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_THROW(parse_stage("dpo"), FormatError);
}

}  // namespace
}  // namespace socnav
