// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file metrics.hpp
 * @brief Held-out evaluation: alignment P/R/F1, sentence cosine, an entropic
 *        optimal-transport mover's similarity, exact match and FPS.
 *
 * Mover's similarity transports uniform mass between the two texts' token
 * embeddings with cost 1 - cosine, solved by Sinkhorn iterations with
 * regularization lambda, and reports 1 / (1 + <P, C>).
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "socnav/embedder.hpp"
#include "socnav/error.hpp"
#include "socnav/moe_policy.hpp"
#include "socnav/navsim.hpp"
#include "socnav/rewards.hpp"

namespace socnav {

inline BertScore bertscore_metric(std::string_view y, std::string_view g, const EmbeddingProvider& embedder) {
  return bertscore(y, g, embedder);
}

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;
};

inline CosineResult sentence_cosine(std::string_view y, std::string_view g, const EmbeddingProvider& embedder) {
  const auto wy = split_words(normalize_text(y)), wg = split_words(normalize_text(g));
  if (wy.empty() || wg.empty()) return {0.0, true};
  auto sy = wy, sg = wg;
  std::sort(sy.begin(), sy.end());
  std::sort(sg.begin(), sg.end());
  if (sy == sg) return {1.0, false};
  return {EmbeddingProvider::cosine(embedder.embed_sentence(wy), embedder.embed_sentence(wg)), false};
}

struct SinkhornConfig {
  double lambda = 0.1;
  double tolerance = 1e-9;
  std::size_t max_iterations = 1000;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("eval.sinkhorn_lambda must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("eval.sinkhorn_tol must be positive");
    if (max_iterations == 0) throw ConfigError("eval.sinkhorn_max_iter must be positive");
  }
};

struct TransportResult {
  std::size_t rows = 0, cols = 0;
  std::vector<double> plan;   // rows x cols
  std::vector<double> cost;   // rows x cols
  double transport_cost = 0.0;
  double marginal_error = 0.0;      // of the returned (rounded) plan
  double raw_marginal_error = 0.0;  // of the best Sinkhorn iterate
  std::size_t iterations = 0;
  bool converged = true;  // the iterate met the tolerance before rounding
};

/// Projects a positive plan onto the transport polytope of marginals a, b:
/// shrink overfull rows, then overfull columns, then spread the remaining
/// deficit with a rank-one correction. Changes the plan by at most the
/// marginal error it removes.
inline void round_to_marginals(std::vector<double>& plan, const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += plan[i * m + j];
    if (s > a[i]) {
      for (std::size_t j = 0; j < m; ++j) plan[i * m + j] *= a[i] / s;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += plan[i * m + j];
    if (s > b[j]) {
      for (std::size_t i = 0; i < n; ++i) plan[i * m + j] *= b[j] / s;
    }
  }
  std::vector<double> dr(n), dc(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += plan[i * m + j];
    total += dr[i] = std::max(0.0, a[i] - s);
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += plan[i * m + j];
    dc[j] = std::max(0.0, b[j] - s);
  }
  if (total <= 0.0) return;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) plan[i * m + j] += dr[i] * dc[j] / total;
}

/// Entropic OT between uniform marginals for a given cost matrix. The best
/// iterate is rounded onto the feasible set before its cost is taken.
inline TransportResult sinkhorn(std::size_t n, std::size_t m, const std::vector<double>& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  if (n == 0 || m == 0 || cost.size() != n * m) throw ContractError("sinkhorn: cost matrix does not match sizes");
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  std::vector<double> K(n * m), u(n, 1.0), v(m, 1.0);
  for (std::size_t i = 0; i < n * m; ++i) K[i] = std::exp(-cost[i] / cfg.lambda);

  TransportResult r{n, m, std::vector<double>(n * m), cost};
  auto build = [&](std::vector<double>& plan) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) plan[i * m + j] = u[i] * K[i * m + j] * v[j];
  };
  auto marginal_error = [&](const std::vector<double>& plan) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += plan[i * m + j];
      err = std::max(err, std::abs(s - a));
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += plan[i * m + j];
      err = std::max(err, std::abs(s - b));
    }
    return err;
  };

  std::vector<double> plan(n * m);
  double best_err = INFINITY;
  r.converged = false;
  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += K[i * m + j] * v[j];
      u[i] = a / s;
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += K[i * m + j] * u[i];
      v[j] = b / s;
    }
    build(plan);
    const double err = marginal_error(plan);
    if (err < best_err) {
      best_err = err;
      r.plan = plan;
      r.iterations = it;
    }
    if (err <= cfg.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.raw_marginal_error = best_err;
  round_to_marginals(r.plan, std::vector<double>(n, a), std::vector<double>(m, b));
  r.marginal_error = marginal_error(r.plan);
  r.transport_cost = 0.0;
  for (std::size_t i = 0; i < n * m; ++i) r.transport_cost += r.plan[i] * cost[i];
  return r;
}

struct MoverResult {
  double similarity = 0.0;
  TransportResult transport;
  bool degenerate = false;
  bool converged = true;
};

/// Texts with the same token multiset have zero transport cost (the
/// matching permutation is feasible) and score exactly 1.
inline MoverResult mover_similarity(std::string_view y, std::string_view g, const EmbeddingProvider& embedder,
                                    const SinkhornConfig& cfg = {}) {
  const auto wy = split_words(normalize_text(y)), wg = split_words(normalize_text(g));
  if (wy.empty() || wg.empty()) return {0.0, {}, true, true};
  auto sy = wy, sg = wg;
  std::sort(sy.begin(), sy.end());
  std::sort(sg.begin(), sg.end());
  const SimilarityMatrix s = similarity_matrix(wy, wg, embedder);
  std::vector<double> cost(s.values.size());
  for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = 1.0 - s.values[i];
  MoverResult out;
  if (sy == sg) {
    TransportResult t{wy.size(), wg.size(), std::vector<double>(cost.size(), 0.0), cost};
    std::vector<bool> used(wg.size(), false);
    for (std::size_t i = 0; i < wy.size(); ++i) {
      for (std::size_t j = 0; j < wg.size(); ++j) {
        if (!used[j] && wy[i] == wg[j]) {
          used[j] = true;
          t.plan[i * wg.size() + j] = 1.0 / static_cast<double>(wy.size());
          break;
        }
      }
    }
    out.transport = std::move(t);
    out.similarity = 1.0;
    return out;
  }
  out.transport = sinkhorn(wy.size(), wg.size(), cost, cfg);
  out.converged = out.transport.converged;
  out.similarity = 1.0 / (1.0 + std::max(0.0, out.transport.transport_cost));
  return out;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Greedy continuation until end-of-sequence or max_len; the returned
/// tokens include the end marker when one was produced.
inline TokenSeq greedy_decode(const Weights& w, const TokenSeq& context, std::size_t max_len) {
  Rng unused(0);
  return sample_response(w, context, max_len, 0.0, unused).tokens;
}

struct ActionGeneration {
  std::string action;
  TokenSeq context;           // full context used for the final turn
  double action_seconds = 0;  // time spent on the final turn only
  double other_seconds = 0;   // time spent on earlier generated turns
};

struct InferenceConfig {
  std::size_t max_turn_len = 48;
  std::size_t max_action_len = 10;
};

/// Plays the conversation turn by turn: prompts come from the record, every
/// response before the last is generated greedily by the model and fed
/// back, and the final response is the generated action.
inline ActionGeneration generate_action(const Weights& w, const Vocabulary& vocab, const navsim::Conversation& conversation,
                                        navsim::TurnMode mode, const InferenceConfig& cfg = {}) {
  using Clock = std::chrono::steady_clock;
  const navsim::Conversation c = navsim::to_turn_mode(conversation, mode);
  if (c.turns.empty() || c.turns.front().role != navsim::Role::prompt || c.turns.back().role != navsim::Role::response) {
    throw ContractError("generate_action: conversation must start with a prompt and end with a response");
  }
  ActionGeneration out;
  TokenSeq ctx;
  const TokenId response_marker = vocab.id(navsim::kResponseMarker);
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    const auto& turn = c.turns[i];
    if (turn.role == navsim::Role::prompt) {
      ctx.push_back(vocab.id(navsim::kPromptMarker));
      for (TokenId t : vocab.encode(turn.text)) ctx.push_back(t);
      continue;
    }
    ctx.push_back(response_marker);
    const bool last = i + 1 == c.turns.size();
    const auto t0 = Clock::now();
    TokenSeq reply = greedy_decode(w, ctx, last ? cfg.max_action_len : cfg.max_turn_len);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (last) {
      out.context = ctx;
      out.action = vocab.decode(reply);
      out.action_seconds = secs;
    } else {
      out.other_seconds += secs;
      if (reply.empty() || reply.back() != Vocabulary::kEos) reply.push_back(Vocabulary::kEos);
      ctx.insert(ctx.end(), reply.begin(), reply.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string id;
  std::string generated;
  std::string reference;
  double precision = 0, recall = 0, f1 = 0, sent_cos = 0, sms = 0, exact = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double mean_precision = 0, mean_recall = 0, mean_f1 = 0, mean_sent_cos = 0, mean_sms = 0, mean_exact = 0;
  std::size_t actions = 0;
  double action_seconds = 0;
  double other_seconds = 0;
  std::size_t parameter_count = 0;

  double fps() const { return action_seconds > 0.0 ? static_cast<double>(actions) / action_seconds : 0.0; }
};

inline MetricRow score_row(std::string id, const std::string& generated, const std::string& reference, const EmbeddingProvider& embedder,
                           const SinkhornConfig& sinkhorn_cfg) {
  MetricRow row{std::move(id), generated, reference};
  const BertScore b = bertscore_metric(generated, reference, embedder);
  row.precision = b.precision;
  row.recall = b.recall;
  row.f1 = b.f1;
  row.sent_cos = sentence_cosine(generated, reference, embedder).value;
  row.sms = mover_similarity(generated, reference, embedder, sinkhorn_cfg).similarity;
  row.exact = hard_reward(generated, reference);
  return row;
}

/// Arithmetic means of the per-example columns.
inline void aggregate(MetricReport& r) {
  const double n = static_cast<double>(r.rows.size());
  r.mean_precision = r.mean_recall = r.mean_f1 = r.mean_sent_cos = r.mean_sms = r.mean_exact = 0.0;
  if (r.rows.empty()) return;
  for (const auto& row : r.rows) {
    r.mean_precision += row.precision;
    r.mean_recall += row.recall;
    r.mean_f1 += row.f1;
    r.mean_sent_cos += row.sent_cos;
    r.mean_sms += row.sms;
    r.mean_exact += row.exact;
  }
  r.mean_precision /= n;
  r.mean_recall /= n;
  r.mean_f1 /= n;
  r.mean_sent_cos /= n;
  r.mean_sms /= n;
  r.mean_exact /= n;
}

struct EvalConfig {
  SinkhornConfig sinkhorn;
  InferenceConfig inference;
  std::size_t warmup = 3;
  navsim::TurnMode turns = navsim::TurnMode::multi;
};

/// Generates and scores the action of every record. Only the final turn is
/// timed, after `warmup` unmeasured generations.
inline MetricReport evaluate(const Weights& w, const std::vector<navsim::Record>& records, const Vocabulary& vocab,
                             const EmbeddingProvider& embedder, const EvalConfig& cfg = {}) {
  MetricReport report;
  report.parameter_count = w.parameter_count();
  if (records.empty()) return report;
  const std::optional<Weights> frozen = w.requires_grad() ? std::optional<Weights>(w.clone(false)) : std::nullopt;
  const Weights& model = frozen ? *frozen : w;
  for (std::size_t i = 0; i < cfg.warmup; ++i) {
    (void)generate_action(model, vocab, records[i % records.size()].conversation, cfg.turns, cfg.inference);
  }
  for (const auto& r : records) {
    const ActionGeneration gen = generate_action(model, vocab, r.conversation, cfg.turns, cfg.inference);
    report.action_seconds += gen.action_seconds;
    report.other_seconds += gen.other_seconds;
    ++report.actions;
    report.rows.push_back(score_row(r.id, gen.action, r.action, embedder, cfg.sinkhorn));
  }
  aggregate(report);
  return report;
}

inline constexpr const char* kMetricColumns = "id,precision,recall,f1,sent_cos,sms,exact,generated,reference";

/// Per-example CSV with a trailing aggregate row (id "mean"). Contains no
/// timing, so it is reproducible byte for byte.
inline void write_metric_csv(std::ostream& out, const MetricReport& r) {
  out << kMetricColumns << '\n';
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", row.precision, row.recall, row.f1, row.sent_cos, row.sms,
                  row.exact);
    out << row.id << ',' << buf << ',' << row.generated << ',' << row.reference << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.mean_precision, r.mean_recall, r.mean_f1, r.mean_sent_cos,
                r.mean_sms, r.mean_exact);
  out << "mean," << buf << ",,\n";
}

inline void write_metric_table(std::ostream& out, const MetricReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "examples        %zu\nprecision       %.4f\nrecall          %.4f\nf1              %.4f\nsentence cos    %.4f\n"
                "mover sim       %.4f\nexact match     %.4f\nparameters      %zu\nactions/second  %.2f\n",
                r.rows.size(), r.mean_precision, r.mean_recall, r.mean_f1, r.mean_sent_cos, r.mean_sms, r.mean_exact, r.parameter_count,
                r.fps());
  out << buf;
}

}  // namespace socnav
