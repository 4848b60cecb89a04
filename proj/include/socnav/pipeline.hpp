// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file pipeline.hpp
 * @brief The three training stages: supervised fine-tuning, reinforcement
 *        fine-tuning and multi-turn MoE fine-tuning.
 */

#pragma once

#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "socnav/autodiff.hpp"
#include "socnav/error.hpp"
#include "socnav/moe_policy.hpp"
#include "socnav/navsim.hpp"
#include "socnav/optim.hpp"
#include "socnav/rewards.hpp"
#include "socnav/rft.hpp"
#include "socnav/rng.hpp"

namespace socnav {

enum class Stage { init, sft, rft, moeft };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::init: return "init";
    case Stage::sft: return "sft";
    case Stage::rft: return "rft";
    case Stage::moeft: return "moeft";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  if (s == "init") return Stage::init;
  if (s == "sft") return Stage::sft;
  if (s == "rft") return Stage::rft;
  if (s == "moeft") return Stage::moeft;
  throw FormatError("unknown stage '" + std::string(s) + "'");
}

/// Stage a checkpoint must come from before `next` may run.
inline Stage required_predecessor(Stage next) {
  switch (next) {
    case Stage::sft: return Stage::init;
    case Stage::rft: return Stage::sft;
    case Stage::moeft: return Stage::rft;
    default: return Stage::init;
  }
}

struct StagePlan {
  Stage stage = Stage::sft;
  std::size_t epochs = 20;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  double grad_clip = 1.0;
  navsim::TurnMode turns = navsim::TurnMode::multi;

  void validate() const {
    const std::string name = to_string(stage);
    if (epochs == 0) throw ConfigError(name + ".epochs must be positive");
    if (!(lr > 0.0)) throw ConfigError(name + ".lr must be positive");
    if (batch_size == 0) throw ConfigError(name + ".batch_size must be positive");
  }
};

// ---------------------------------------------------------------------------
// Supervised objective
// ---------------------------------------------------------------------------

/// Summed negative log-likelihood of the tokens whose mask bit is set, each
/// predicted from every token before it.
inline Tensor masked_nll(const Weights& w, const TokenSeq& tokens, const std::vector<bool>& mask, RoutingStats* stats = nullptr) {
  if (mask.size() != tokens.size()) throw ContractError("masked_nll: mask and tokens differ in length");
  if (!mask.empty() && mask[0]) throw ContractError("masked_nll: the first token has no context and cannot be a target");
  std::vector<std::size_t> rows;
  TokenSeq targets;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (!mask[t]) continue;
    rows.push_back(t - 1);
    targets.push_back(tokens[t]);
  }
  if (rows.empty()) throw ContractError("masked_nll: no supervised tokens");
  const TokenSeq context(tokens.begin(), tokens.end() - 1);
  const Tensor hidden = hidden_states(w, context, stats);
  const Tensor logits = project_to_vocab(w, ad::gather_rows(hidden, rows));
  return ad::sum(ad::cross_entropy(logits, targets));
}

inline Tensor sft_loss(const Weights& w, const navsim::EncodedConversation& c, RoutingStats* stats = nullptr) {
  return masked_nll(w, c.tokens, c.target_mask, stats);
}

inline Tensor sft_loss(const Weights& w, const Vocabulary& vocab, const navsim::Conversation& c, RoutingStats* stats = nullptr) {
  if (!c.well_formed()) throw ContractError("sft_loss: conversation is not well formed");
  return sft_loss(w, navsim::encode_conversation(vocab, c), stats);
}

/// In-place Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct EpochReport {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // per conversation
  std::vector<std::vector<std::size_t>> expert_histogram;  // [moe layer][expert]
  std::size_t routed_tokens = 0;
};

struct SupervisedReport {
  std::vector<EpochReport> epochs;
};

namespace detail {

inline SupervisedReport supervised_loop(PolicyModel& model, const std::vector<navsim::Record>& records, const Vocabulary& vocab,
                                        const StagePlan& plan, Rng& rng, bool track_routing, std::ostream* log) {
  plan.validate();
  if (records.empty()) throw ContractError(std::string(to_string(plan.stage)) + ": empty training set");
  std::vector<navsim::EncodedConversation> data;
  for (const auto& r : records) data.push_back(navsim::encode_conversation(vocab, navsim::to_turn_mode(r.conversation, plan.turns)));
  Adam opt(plan.lr);
  const auto params = model.parameters();
  SupervisedReport report;
  if (log) *log << (track_routing ? "epoch,mean_loss,routed_tokens,expert_histogram\n" : "epoch,mean_loss\n");
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto order = shuffled_order(data.size(), rng);
    RoutingStats stats;
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const std::size_t end = std::min(order.size(), start + plan.batch_size);
      std::vector<Tensor> losses;
      for (std::size_t i = start; i < end; ++i) losses.push_back(sft_loss(model.weights(), data[order[i]], track_routing ? &stats : nullptr));
      const Tensor loss = ad::scale(ad::add_n(losses), 1.0 / static_cast<double>(end - start));
      total += loss.item() * static_cast<double>(end - start);
      model.zero_grad();
      ad::backward(loss);
      clip_grad_norm(params, plan.grad_clip);
      opt.step(params);
    }
    EpochReport e{epoch, total / static_cast<double>(data.size()), stats.expert_tokens, stats.routed_tokens};
    if (log) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu,%.17g", epoch, e.mean_loss);
      *log << buf;
      if (track_routing) {
        *log << ',' << e.routed_tokens << ',';
        for (std::size_t l = 0; l < e.expert_histogram.size(); ++l) {
          if (l) *log << '|';
          for (std::size_t k = 0; k < e.expert_histogram[l].size(); ++k) *log << (k ? ";" : "") << e.expert_histogram[l][k];
        }
      }
      *log << '\n';
    }
    report.epochs.push_back(std::move(e));
  }
  return report;
}

}  // namespace detail

/// Minibatch Adam on the masked response likelihood. Logs one CSV row per
/// epoch when `log` is given.
inline SupervisedReport run_sft(PolicyModel& model, const std::vector<navsim::Record>& records, const Vocabulary& vocab,
                                const StagePlan& plan, Rng& rng, std::ostream* log = nullptr) {
  return detail::supervised_loop(model, records, vocab, plan, rng, false, log);
}

/// Same objective over full multi-turn conversations, with per-epoch expert
/// selection counts.
inline SupervisedReport run_moeft(PolicyModel& model, const std::vector<navsim::Record>& records, const Vocabulary& vocab,
                                  const StagePlan& plan, Rng& rng, std::ostream* log = nullptr) {
  if (!model.has_moe()) throw ConfigError("moeft requires a model with MoE layers (model.moe = true)");
  return detail::supervised_loop(model, records, vocab, plan, rng, true, log);
}

// ---------------------------------------------------------------------------
// Reinforcement stage
// ---------------------------------------------------------------------------

inline std::vector<RftPrompt> rft_prompts(const std::vector<navsim::Record>& records, const Vocabulary& vocab, navsim::TurnMode turns) {
  std::vector<RftPrompt> out;
  for (const auto& r : records) out.push_back({navsim::action_prompt(vocab, navsim::to_turn_mode(r.conversation, turns)), r.action});
  return out;
}

struct RftRunReport {
  std::vector<StepReport> steps;
  std::size_t steps_per_epoch = 0;
};

/// pi_ref is frozen at entry; pi_old is refreshed every step.
inline RftRunReport run_rft(PolicyModel& model, const std::vector<navsim::Record>& records, const Vocabulary& vocab, const RftConfig& cfg,
                            const RewardSpec& reward, navsim::TurnMode turns, Rng& rng, std::ostream* log = nullptr,
                            std::ostream* timing = nullptr) {
  cfg.validate();
  reward.validate();
  if (records.empty()) throw ContractError("rft: empty training set");
  const auto prompts = rft_prompts(records, vocab, turns);
  const PolicySnapshot reference = model.snapshot();
  Sgd opt(cfg.lr, cfg.momentum);
  RftRunReport report;
  report.steps_per_epoch = (prompts.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (log) write_step_header(*log);
  if (timing) *timing << "step,wall_ms\n";
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(prompts.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<RftPrompt> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(prompts[order[i]]);
      const StepReport r = rft_step(model, opt, batch, reward, cfg, reference, rng, vocab);
      if (log) write_step_row(*log, step, r);
      if (timing) *timing << step << ',' << r.wall_ms << '\n';
      report.steps.push_back(r);
      ++step;
    }
  }
  return report;
}

}  // namespace socnav
