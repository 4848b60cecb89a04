// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file rft.hpp
 * @brief Group-relative reinforcement fine-tuning.
 *
 * For a prompt x, G responses y_i are drawn from the rollout snapshot
 * pi_old. With group-normalized advantages A_i the sequence-level (GSPO)
 * objective is
 *
 *   s_i = exp((log pi(y_i|x) - log pi_old(y_i|x)) / |y_i|)
 *   J   = mean_i min(s_i A_i, clip(s_i, 1-eps, 1+eps) A_i) - beta mean_i KL_i
 *   KL_i = r_i - log r_i - 1,   r_i = pi_ref(y_i|x) / pi(y_i|x)
 *
 * The token-level (GRPO) variant clips each per-token ratio separately and
 * averages over tokens before averaging over responses. pi_old and pi_ref
 * enter only as constants.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "socnav/autodiff.hpp"
#include "socnav/error.hpp"
#include "socnav/moe_policy.hpp"
#include "socnav/optim.hpp"
#include "socnav/rewards.hpp"
#include "socnav/rng.hpp"
#include "socnav/vocab.hpp"

namespace socnav {

enum class RftAlgorithm { gspo, grpo };

inline const char* to_string(RftAlgorithm a) { return a == RftAlgorithm::gspo ? "gspo" : "grpo"; }

inline RftAlgorithm parse_rft_algorithm(std::string_view s) {
  if (s == "gspo") return RftAlgorithm::gspo;
  if (s == "grpo") return RftAlgorithm::grpo;
  throw ConfigError("unknown rft algorithm '" + std::string(s) + "' (expected gspo or grpo)");
}

struct RftConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double lr = 2e-6;
  double momentum = 0.0;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;  // prompts per update
  double temperature = 1.0;
  std::size_t max_response_len = 10;
  RftAlgorithm algorithm = RftAlgorithm::gspo;
  double std_floor = 1e-8;
  double grad_clip = 1.0;

  void validate() const {
    if (group_size < 2) throw ConfigError("rft.group_size must be at least 2");
    if (!(clip_eps > 0.0)) throw ConfigError("rft.clip_eps must be positive");
    if (!(kl_beta >= 0.0)) throw ConfigError("rft.kl_beta must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("rft.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("rft.momentum must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("rft.batch_size must be positive");
    if (!(temperature > 0.0)) throw ConfigError("rft.temperature must be positive");
    if (max_response_len == 0) throw ConfigError("rft.max_response_len must be positive");
    if (!(std_floor >= 0.0)) throw ConfigError("rft.std_floor must be non-negative");
  }
};

/// G responses to one prompt with everything the objective needs.
struct ResponseGroup {
  TokenSeq prompt;
  std::vector<TokenSeq> responses;
  std::vector<Tensor> logp_theta;               // per-token, graph-attached to pi
  std::vector<std::vector<double>> logp_old;    // per-token under pi_old
  std::vector<double> logp_ref;                 // sequence log-prob under pi_ref
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return logp_theta.size(); }
};

// ---------------------------------------------------------------------------
// Scalar algebra
// ---------------------------------------------------------------------------

/// Group-normalized advantages with the population standard deviation.
/// A group whose rewards are all equal gets all-zero advantages.
inline std::vector<double> advantages(const std::vector<double>& rewards, double std_floor = 1e-8) {
  if (rewards.size() < 2) throw ContractError("advantages: need at least two rewards, got " + std::to_string(rewards.size()));
  const double n = static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return out;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sd + std_floor);
  return out;
}

/// Geometric mean of per-token ratios, evaluated in log space.
inline double gspo_ratio(const std::vector<double>& logp_theta, const std::vector<double>& logp_old) {
  if (logp_theta.empty() || logp_theta.size() != logp_old.size()) throw ContractError("gspo_ratio: need equal, non-empty token lists");
  double diff = 0.0;
  for (std::size_t t = 0; t < logp_theta.size(); ++t) diff += logp_theta[t] - logp_old[t];
  return std::exp(diff / static_cast<double>(logp_theta.size()));
}

/// r - log r - 1 with log r = logp_ref - logp_theta.
inline double kl_estimate(double logp_ref, double logp_theta) {
  const double log_r = logp_ref - logp_theta;
  return std::exp(log_r) - log_r - 1.0;
}

/// min(s A, clip(s, 1-eps, 1+eps) A).
inline double clipped_surrogate(double s, double advantage, double eps) {
  return std::min(s * advantage, std::clamp(s, 1.0 - eps, 1.0 + eps) * advantage);
}

// ---------------------------------------------------------------------------
// Differentiable terms
// ---------------------------------------------------------------------------

inline void check_member(const ResponseGroup& g, std::size_t i) {
  if (i >= g.size()) throw ContractError("response index " + std::to_string(i) + " out of range");
  if (g.logp_theta[i].size() == 0) throw ContractError("empty response");
  if (g.logp_old[i].size() != g.logp_theta[i].size()) throw ContractError("pi_old and pi token counts differ");
}

/// s_i as a graph node.
inline Tensor importance_ratio_gspo(const ResponseGroup& g, std::size_t i) {
  check_member(g, i);
  const Tensor& lp = g.logp_theta[i];
  const Tensor old(lp.shape(), g.logp_old[i]);
  return ad::exp(ad::scale(ad::sum(ad::sub(lp, old)), 1.0 / static_cast<double>(lp.size())));
}

/// KL_i as a graph node.
inline Tensor kl_penalty(const ResponseGroup& g, std::size_t i) {
  check_member(g, i);
  const Tensor log_r = ad::add_scalar(ad::neg(ad::sum(g.logp_theta[i])), g.logp_ref[i]);
  return ad::add_scalar(ad::sub(ad::exp(log_r), log_r), -1.0);
}

struct Objective {
  Tensor value;              // J, to be maximized
  double clip_fraction = 0;  // share of ratios outside [1-eps, 1+eps]
  double mean_kl = 0;
};

namespace detail {

inline Tensor surrogate_term(const Tensor& ratio, double advantage, double eps) {
  return ad::minimum(ad::scale(ratio, advantage), ad::scale(ad::clamp(ratio, 1.0 - eps, 1.0 + eps), advantage));
}

inline bool outside_clip(double ratio, double eps) { return ratio < 1.0 - eps || ratio > 1.0 + eps; }

inline Objective finish_objective(const ResponseGroup& g, std::vector<Tensor> terms, std::size_t clipped, std::size_t counted,
                                  double beta) {
  const double G = static_cast<double>(g.size());
  std::vector<Tensor> kls;
  double kl_sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    kls.push_back(kl_penalty(g, i));
    kl_sum += kls.back().item();
  }
  Tensor surrogate = ad::scale(ad::add_n(terms), 1.0 / G);
  Tensor value = ad::sub(surrogate, ad::scale(ad::add_n(kls), beta / G));
  return {std::move(value), counted ? static_cast<double>(clipped) / static_cast<double>(counted) : 0.0, kl_sum / G};
}

inline void check_group(const ResponseGroup& g) {
  if (g.size() < 2) throw ContractError("response group needs at least two responses");
  if (g.advantages.size() != g.size() || g.logp_old.size() != g.size() || g.logp_ref.size() != g.size()) {
    throw ContractError("response group is not fully populated");
  }
}

}  // namespace detail

/// Sequence-level clipped objective.
inline Objective gspo_objective(const ResponseGroup& g, const RftConfig& cfg) {
  detail::check_group(g);
  std::vector<Tensor> terms;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Tensor s = importance_ratio_gspo(g, i);
    clipped += detail::outside_clip(s.item(), cfg.clip_eps);
    terms.push_back(detail::surrogate_term(s, g.advantages[i], cfg.clip_eps));
  }
  return detail::finish_objective(g, std::move(terms), clipped, g.size(), cfg.kl_beta);
}

/// Token-level clipped objective with the sequence advantage on every token.
inline Objective grpo_objective(const ResponseGroup& g, const RftConfig& cfg) {
  detail::check_group(g);
  std::vector<Tensor> terms;
  std::size_t clipped = 0, counted = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    check_member(g, i);
    const Tensor& lp = g.logp_theta[i];
    const Tensor rho = ad::exp(ad::sub(lp, Tensor(lp.shape(), g.logp_old[i])));
    for (double r : rho.data()) clipped += detail::outside_clip(r, cfg.clip_eps);
    counted += rho.size();
    terms.push_back(ad::mean(detail::surrogate_term(rho, g.advantages[i], cfg.clip_eps)));
  }
  return detail::finish_objective(g, std::move(terms), clipped, counted, cfg.kl_beta);
}

inline Objective rft_objective(const ResponseGroup& g, const RftConfig& cfg) {
  return cfg.algorithm == RftAlgorithm::gspo ? gspo_objective(g, cfg) : grpo_objective(g, cfg);
}

// ---------------------------------------------------------------------------
// One update
// ---------------------------------------------------------------------------

struct RftPrompt {
  TokenSeq prompt;
  std::string reference;  // ground-truth response text
};

struct StepReport {
  double objective = 0.0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

/// Rollouts from a frozen snapshot, one stream per (prompt, sample).
inline ResponseGroup sample_group(const PolicySnapshot& old, const RftPrompt& p, const RftConfig& cfg, const RewardSpec& reward,
                                  const Vocabulary& vocab, std::uint64_t stream) {
  ResponseGroup g;
  g.prompt = p.prompt;
  std::map<TokenSeq, std::vector<double>> memo;
  for (std::size_t i = 0; i < cfg.group_size; ++i) {
    Rng rng(derive_seed(stream, i));
    SampledResponse r = sample_response(old.weights(), p.prompt, cfg.max_response_len, cfg.temperature, rng, &memo);
    g.rewards.push_back(reward(vocab.decode(r.tokens), p.reference));
    g.responses.push_back(std::move(r.tokens));
    g.logp_old.push_back(std::move(r.logprobs));
  }
  g.advantages = advantages(g.rewards, cfg.std_floor);
  return g;
}

/// Samples a group per prompt from a fresh pi_old snapshot, then takes one
/// gradient-ascent step on the mean objective. `optimizer` must have been
/// built for this model's parameter registry.
inline StepReport rft_step(PolicyModel& model, Sgd& optimizer, const std::vector<RftPrompt>& batch, const RewardSpec& reward,
                           const RftConfig& cfg, const PolicySnapshot& reference, Rng& rng, const Vocabulary& vocab) {
  cfg.validate();
  reward.validate();
  if (batch.empty()) throw ContractError("rft_step: empty prompt batch");
  const auto start = std::chrono::steady_clock::now();
  const PolicySnapshot old = model.snapshot();
  const std::uint64_t base = rng.next_u64();
  StepReport report;
  std::vector<Tensor> objectives;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ResponseGroup g = sample_group(old, batch[b], cfg, reward, vocab, derive_seed(base, b));
    // Identical rollouts share one scored graph; gradients through a shared
    // node accumulate once per use, as if scored separately.
    std::map<TokenSeq, std::pair<double, Tensor>> scored;
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      auto it = scored.find(g.responses[i]);
      if (it == scored.end()) {
        it = scored
                 .emplace(g.responses[i], std::make_pair(sequence_logprob(reference.weights(), g.prompt, g.responses[i]).total.item(),
                                                         sequence_logprob(model.weights(), g.prompt, g.responses[i]).per_token))
                 .first;
      }
      g.logp_ref.push_back(it->second.first);
      g.logp_theta.push_back(it->second.second);
    }
    const Objective obj = rft_objective(g, cfg);
    for (double r : g.rewards) report.mean_reward += r;
    report.mean_kl += obj.mean_kl;
    report.clip_fraction += obj.clip_fraction;
    objectives.push_back(obj.value);
  }
  const double n = static_cast<double>(batch.size());
  const Tensor J = ad::scale(ad::add_n(objectives), 1.0 / n);
  report.objective = J.item();
  report.mean_reward /= n * static_cast<double>(cfg.group_size);
  report.mean_kl /= n;
  report.clip_fraction /= n;

  model.zero_grad();
  ad::backward(J);
  const auto params = model.parameters();
  report.grad_norm = clip_grad_norm(params, cfg.grad_clip);
  optimizer.step(params, /*ascend=*/true);
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Deterministic columns of an RFT log; wall time goes to a separate file.
inline void write_step_header(std::ostream& out) { out << "step,objective,mean_reward,mean_kl,clip_fraction,grad_norm\n"; }

inline void write_step_row(std::ostream& out, std::size_t step, const StepReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, r.objective, r.mean_reward, r.mean_kl, r.clip_fraction,
                r.grad_norm);
  out << buf;
}

}  // namespace socnav
