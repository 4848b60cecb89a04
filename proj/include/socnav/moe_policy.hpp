// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file moe_policy.hpp
 * @brief Autoregressive token policy with alternating dense and sparse
 *        mixture-of-experts feed-forward blocks.
 *
 * Block i uses a dense feed-forward when i is even and a top-k routed
 * mixture of experts when i is odd. Router weights are the softmax over all
 * K router logits; the selected experts are mixed with those raw weights
 * (no renormalization over the selected set) and unselected experts are not
 * evaluated at all.
 */

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "socnav/autodiff.hpp"
#include "socnav/error.hpp"
#include "socnav/rng.hpp"
#include "socnav/vocab.hpp"

namespace socnav {

using ad::Tensor;

struct RouterConfig {
  std::size_t num_experts = 4;
  std::size_t top_k = 1;

  void validate() const {
    if (num_experts == 0) throw ConfigError("router: num_experts must be positive");
    if (top_k == 0 || top_k > num_experts) {
      throw ConfigError("router: top_k must be in [1, num_experts], got top_k=" + std::to_string(top_k) +
                        " num_experts=" + std::to_string(num_experts));
    }
  }
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t num_layers = 4;
  std::size_t num_heads = 2;
  std::size_t ffn_hidden = 128;
  std::size_t num_experts = 4;
  std::size_t top_k = 1;
  std::size_t max_context = 256;
  bool moe = true;  // false: every block is dense
  std::uint64_t init_seed = 1;

  RouterConfig router() const { return {num_experts, top_k}; }
  bool is_moe_block(std::size_t i) const { return moe && i % 2 == 1; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("model.vocab_size must be at least 2");
    if (d_model == 0 || num_layers == 0 || num_heads == 0 || ffn_hidden == 0 || max_context == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (d_model % num_heads != 0) throw ConfigError("model.d_model must be divisible by model.heads");
    if (moe) router().validate();
  }

  /// key=value lines, the config echo stored in checkpoints.
  std::string to_text() const {
    std::ostringstream out;
    out << "vocab_size=" << vocab_size << "\nd_model=" << d_model << "\nlayers=" << num_layers << "\nheads=" << num_heads
        << "\nffn_hidden=" << ffn_hidden << "\nexperts=" << num_experts << "\ntop_k=" << top_k
        << "\nmax_context=" << max_context << "\nmoe=" << (moe ? 1 : 0) << "\ninit_seed=" << init_seed << "\n";
    return out.str();
  }

  static ModelConfig from_map(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto num = [&](const char* key, auto& field) {
      auto it = kv.find(key);
      if (it == kv.end()) throw FormatError(std::string("model config is missing '") + key + "'");
      try {
        field = static_cast<std::remove_reference_t<decltype(field)>>(std::stoull(it->second));
      } catch (const std::exception&) {
        throw FormatError(std::string("model config field '") + key + "' is not a number");
      }
    };
    num("vocab_size", c.vocab_size);
    num("d_model", c.d_model);
    num("layers", c.num_layers);
    num("heads", c.num_heads);
    num("ffn_hidden", c.ffn_hidden);
    num("experts", c.num_experts);
    num("top_k", c.top_k);
    num("max_context", c.max_context);
    num("init_seed", c.init_seed);
    std::size_t moe = 0;
    num("moe", moe);
    c.moe = moe != 0;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
};

struct MoELayer {
  Tensor router_w, router_b;
  std::vector<FeedForward> experts;
};

struct Block {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  std::optional<FeedForward> ffn;
  std::optional<MoELayer> moe;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// All parameters of a policy. Tensors are handles; copies of a Weights
/// share storage, use clone() for an independent copy.
struct Weights {
  ModelConfig config;
  Tensor tok_emb, pos_emb;
  std::vector<Block> blocks;
  Tensor lnf_gain, lnf_bias;
  Tensor head_w, head_b;

  /// Fixed-order named registry; handles alias the live parameters.
  std::vector<NamedTensor> registry() const {
    std::vector<NamedTensor> out;
    out.emplace_back("embed.tokens", tok_emb);
    out.emplace_back("embed.positions", pos_emb);
    auto add_ffn = [&](const std::string& prefix, const FeedForward& f) {
      out.emplace_back(prefix + ".w1", f.w1);
      out.emplace_back(prefix + ".b1", f.b1);
      out.emplace_back(prefix + ".w2", f.w2);
      out.emplace_back(prefix + ".b2", f.b2);
    };
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Block& b = blocks[i];
      const std::string p = "blocks." + std::to_string(i);
      out.emplace_back(p + ".ln1.gain", b.ln1_gain);
      out.emplace_back(p + ".ln1.bias", b.ln1_bias);
      out.emplace_back(p + ".attn.wq", b.wq);
      out.emplace_back(p + ".attn.wk", b.wk);
      out.emplace_back(p + ".attn.wv", b.wv);
      out.emplace_back(p + ".attn.wo", b.wo);
      out.emplace_back(p + ".attn.bo", b.bo);
      out.emplace_back(p + ".ln2.gain", b.ln2_gain);
      out.emplace_back(p + ".ln2.bias", b.ln2_bias);
      if (b.ffn) add_ffn(p + ".ffn", *b.ffn);
      if (b.moe) {
        out.emplace_back(p + ".moe.router.weight", b.moe->router_w);
        out.emplace_back(p + ".moe.router.bias", b.moe->router_b);
        for (std::size_t e = 0; e < b.moe->experts.size(); ++e) add_ffn(p + ".moe.experts." + std::to_string(e), b.moe->experts[e]);
      }
    }
    out.emplace_back("final_ln.gain", lnf_gain);
    out.emplace_back("final_ln.bias", lnf_bias);
    out.emplace_back("head.weight", head_w);
    out.emplace_back("head.bias", head_b);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : registry()) n += t.size();
    return n;
  }

  bool requires_grad() const { return tok_emb.requires_grad(); }

  /// Independent deep copy.
  Weights clone(bool requires_grad) const {
    Weights w = *this;
    auto fresh = [&](Tensor& t) { t = t.detach(requires_grad); };
    fresh(w.tok_emb);
    fresh(w.pos_emb);
    for (Block& b : w.blocks) {
      for (Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2_gain, &b.ln2_bias}) fresh(*t);
      auto fresh_ffn = [&](FeedForward& f) {
        fresh(f.w1);
        fresh(f.b1);
        fresh(f.w2);
        fresh(f.b2);
      };
      if (b.ffn) fresh_ffn(*b.ffn);
      if (b.moe) {
        fresh(b.moe->router_w);
        fresh(b.moe->router_b);
        for (auto& e : b.moe->experts) fresh_ffn(e);
      }
    }
    fresh(w.lnf_gain);
    fresh(w.lnf_bias);
    fresh(w.head_w);
    fresh(w.head_b);
    return w;
  }

  /// Seeded initialization. Each parameter draws from its own stream keyed by
  /// its role; expert 0 of an MoE block uses the same streams as the dense
  /// feed-forward it replaces, so a single-expert model starts out identical
  /// to the all-dense model.
  static Weights initialize(const ModelConfig& cfg, bool requires_grad = true) {
    cfg.validate();
    Weights w;
    w.config = cfg;
    const std::size_t d = cfg.d_model, h = cfg.ffn_hidden, v = cfg.vocab_size;
    auto normal = [&](const std::string& key, ad::Shape shape, double stddev) {
      Rng rng(derive_seed(cfg.init_seed, fnv1a64(key)));
      std::vector<double> data(ad::numel(shape));
      for (double& x : data) x = stddev * rng.normal();
      return Tensor(std::move(shape), std::move(data), requires_grad);
    };
    auto constant = [&](ad::Shape shape, double value) {
      const std::size_t n = ad::numel(shape);
      return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    };
    const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double in_h = 1.0 / std::sqrt(static_cast<double>(h));
    const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));
    w.tok_emb = normal("embed.tokens", {v, d}, 0.5);
    w.pos_emb = normal("embed.positions", {cfg.max_context, d}, 0.1);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      Block b;
      b.ln1_gain = constant({d}, 1.0);
      b.ln1_bias = constant({d}, 0.0);
      b.wq = normal(p + ".attn.wq", {d, d}, in_d);
      b.wk = normal(p + ".attn.wk", {d, d}, in_d);
      b.wv = normal(p + ".attn.wv", {d, d}, in_d);
      b.wo = normal(p + ".attn.wo", {d, d}, in_d * residual);
      b.bo = constant({d}, 0.0);
      b.ln2_gain = constant({d}, 1.0);
      b.ln2_bias = constant({d}, 0.0);
      auto make_ffn = [&](const std::string& key_suffix) {
        FeedForward f;
        f.w1 = normal(p + ".ffn.w1" + key_suffix, {d, h}, in_d);
        f.b1 = constant({h}, 0.0);
        f.w2 = normal(p + ".ffn.w2" + key_suffix, {h, d}, in_h * residual);
        f.b2 = constant({d}, 0.0);
        return f;
      };
      if (cfg.is_moe_block(i)) {
        MoELayer m;
        m.router_w = normal(p + ".moe.router.weight", {d, cfg.num_experts}, in_d);
        m.router_b = constant({cfg.num_experts}, 0.0);
        for (std::size_t e = 0; e < cfg.num_experts; ++e) m.experts.push_back(make_ffn(e == 0 ? "" : "#" + std::to_string(e)));
        b.moe = std::move(m);
      } else {
        b.ffn = make_ffn("");
      }
      w.blocks.push_back(std::move(b));
    }
    w.lnf_gain = constant({d}, 1.0);
    w.lnf_bias = constant({d}, 0.0);
    w.head_w = normal("head.weight", {d, v}, in_d);
    w.head_b = constant({v}, 0.0);
    return w;
  }
};

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

/// Counters filled during a forward pass.
struct RoutingStats {
  /// [moe layer ordinal][expert] -> tokens routed there.
  std::vector<std::vector<std::size_t>> expert_tokens;
  /// Expert sub-network evaluations, counted per token row.
  std::size_t expert_evaluations = 0;
  /// (token, moe layer) pairs that went through a router.
  std::size_t routed_tokens = 0;

  void record(std::size_t layer, std::size_t expert, std::size_t rows, std::size_t num_experts) {
    if (expert_tokens.size() <= layer) expert_tokens.resize(layer + 1);
    if (expert_tokens[layer].size() < num_experts) expert_tokens[layer].resize(num_experts, 0);
    expert_tokens[layer][expert] += rows;
    expert_evaluations += rows;
  }
};

/// Indices of the k largest weights, heaviest first; ties go to the lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> weights, std::size_t k) {
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

struct RouteResult {
  Tensor weights;                     // softmax over all K experts
  std::vector<std::size_t> selected;  // top-k, heaviest first
};

inline Tensor feed_forward(const Tensor& x, const FeedForward& f) {
  return ad::add_row(ad::matmul(ad::gelu(ad::add_row(ad::matmul(x, f.w1), f.b1)), f.w2), f.b2);
}

inline Tensor router_logits(const Tensor& x, const MoELayer& layer) {
  return ad::add_row(ad::matmul(x, layer.router_w), layer.router_b);
}

/// Router distribution and top-k choice for a single token state.
inline RouteResult route(const Tensor& token_state, const MoELayer& layer, const RouterConfig& cfg) {
  cfg.validate();
  const Tensor x = ad::reshape(token_state, {1, token_state.size()});
  Tensor w = ad::reshape(ad::softmax(router_logits(x, layer)), {layer.experts.size()});
  auto selected = top_k_indices(w.data(), cfg.top_k);
  return {std::move(w), std::move(selected)};
}

/// Sparse mixture over the rows of x: each row goes to its top-k experts and
/// the expert outputs are weighted by the raw router softmax.
inline Tensor moe_forward_rows(const Tensor& x, const MoELayer& layer, const RouterConfig& cfg, RoutingStats* stats = nullptr,
                               std::size_t layer_ordinal = 0) {
  const std::size_t rows = x.rows(), K = layer.experts.size();
  if (cfg.num_experts != K) throw ConfigError("router config expects " + std::to_string(cfg.num_experts) + " experts, layer has " + std::to_string(K));
  const Tensor gate = ad::softmax(router_logits(x, layer));
  std::vector<std::vector<std::size_t>> assigned(K);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t e : top_k_indices(gate.data().subspan(r * K, K), cfg.top_k)) assigned[e].push_back(r);
  }
  if (stats) stats->routed_tokens += rows;
  std::optional<Tensor> out;
  for (std::size_t e = 0; e < K; ++e) {
    if (assigned[e].empty()) continue;
    if (stats) stats->record(layer_ordinal, e, assigned[e].size(), K);
    const Tensor y = feed_forward(ad::gather_rows(x, assigned[e]), layer.experts[e]);
    const Tensor g = ad::gather_cols(ad::gather_rows(gate, assigned[e]), std::vector<std::size_t>(assigned[e].size(), e));
    const Tensor part = ad::scatter_add_rows(ad::scale_rows(y, g), assigned[e], rows);
    out = out ? ad::add(*out, part) : part;
  }
  return *out;
}

/// Single-token form of moe_forward_rows.
inline Tensor moe_forward(const Tensor& token_state, const MoELayer& layer, const RouterConfig& cfg,
                          RoutingStats* stats = nullptr) {
  const Tensor x = ad::reshape(token_state, {1, token_state.size()});
  return ad::reshape(moe_forward_rows(x, layer, cfg, stats), {token_state.size()});
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

inline Tensor causal_self_attention(const Tensor& h, const Block& b, std::size_t heads) {
  const std::size_t d = h.cols(), dh = d / heads;
  const Tensor q = ad::matmul(h, b.wq), k = ad::matmul(h, b.wk), v = ad::matmul(h, b.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor qh = ad::slice_cols(q, i * dh, dh), kh = ad::slice_cols(k, i * dh, dh), vh = ad::slice_cols(v, i * dh, dh);
    const Tensor att = ad::causal_softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
    outs.push_back(ad::matmul(att, vh));
  }
  const Tensor merged = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::add_row(ad::matmul(merged, b.wo), b.bo);
}

inline void check_tokens(const Weights& w, const TokenSeq& tokens) {
  if (tokens.empty()) throw ContractError("forward: empty token sequence");
  if (tokens.size() > w.config.max_context) {
    throw ContractError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max context " +
                        std::to_string(w.config.max_context));
  }
  for (TokenId t : tokens) {
    if (t >= w.config.vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) + " is outside vocabulary of size " + std::to_string(w.config.vocab_size));
    }
  }
}

/// Final-layer-normalized hidden states [len x d_model].
inline Tensor hidden_states(const Weights& w, const TokenSeq& tokens, RoutingStats* stats = nullptr) {
  check_tokens(w, tokens);
  std::vector<std::size_t> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Tensor x = ad::add(ad::embedding_lookup(w.tok_emb, tokens), ad::gather_rows(w.pos_emb, positions));
  std::size_t moe_ordinal = 0;
  for (const Block& b : w.blocks) {
    x = ad::add(x, causal_self_attention(ad::layer_norm(x, b.ln1_gain, b.ln1_bias), b, w.config.num_heads));
    const Tensor h = ad::layer_norm(x, b.ln2_gain, b.ln2_bias);
    if (b.moe) {
      x = ad::add(x, moe_forward_rows(h, *b.moe, w.config.router(), stats, moe_ordinal++));
    } else {
      x = ad::add(x, feed_forward(h, *b.ffn));
    }
  }
  return ad::layer_norm(x, w.lnf_gain, w.lnf_bias);
}

inline Tensor project_to_vocab(const Weights& w, const Tensor& hidden) {
  return ad::add_row(ad::matmul(hidden, w.head_w), w.head_b);
}

/// Next-token logits for every position [len x vocab].
inline Tensor forward(const Weights& w, const TokenSeq& tokens, RoutingStats* stats = nullptr) {
  return project_to_vocab(w, hidden_states(w, tokens, stats));
}

/// Logits predicting the token after the last one.
inline std::vector<double> next_token_logits(const Weights& w, const TokenSeq& prefix) {
  const Tensor hidden = hidden_states(w, prefix);
  const Tensor last = project_to_vocab(w, ad::gather_rows(hidden, {prefix.size() - 1}));
  return {last.data().begin(), last.data().end()};
}

inline std::vector<double> log_softmax_values(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// ---------------------------------------------------------------------------
// Model and snapshots
// ---------------------------------------------------------------------------

/// Frozen deep copy of a policy. Evaluating it never records a graph.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const Weights& source) : weights_(source.clone(false)) {}
  const Weights& weights() const { return weights_; }
  const ModelConfig& config() const { return weights_.config; }

 private:
  Weights weights_;
};

/// Trainable policy: parameters carry gradients.
class PolicyModel {
 public:
  explicit PolicyModel(const ModelConfig& cfg) : weights_(Weights::initialize(cfg, true)) {}
  explicit PolicyModel(Weights weights) : weights_(std::move(weights)) {
    if (!weights_.requires_grad()) weights_ = weights_.clone(true);
  }

  const Weights& weights() const { return weights_; }
  const ModelConfig& config() const { return weights_.config; }
  std::vector<NamedTensor> parameters() const { return weights_.registry(); }
  std::size_t parameter_count() const { return weights_.parameter_count(); }
  bool has_moe() const {
    return std::any_of(weights_.blocks.begin(), weights_.blocks.end(), [](const Block& b) { return b.moe.has_value(); });
  }

  PolicySnapshot snapshot() const { return PolicySnapshot(weights_); }

  void zero_grad() {
    for (auto& [name, t] : weights_.registry()) t.zero_grad();
  }

 private:
  Weights weights_;
};

inline std::size_t parameter_count(const PolicyModel& m) { return m.parameter_count(); }
inline PolicySnapshot snapshot(const PolicyModel& m) { return m.snapshot(); }

/// name, shape and count per parameter plus the total.
inline std::string registry_dump(const Weights& w) {
  std::ostringstream out;
  std::size_t total = 0;
  for (const auto& [name, t] : w.registry()) {
    out << name << ' ' << ad::shape_string(t.shape()) << ' ' << t.size() << '\n';
    total += t.size();
  }
  out << "total " << total << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Sampling and scoring
// ---------------------------------------------------------------------------

struct SampledResponse {
  TokenSeq tokens;
  std::vector<double> logprobs;  // log pi(token | prefix) at generation time
};

/// Draws one response token by token until end-of-sequence or max_len.
/// temperature == 0 means greedy argmax with ties to the lowest id. The
/// recorded log-probabilities are those of the untempered policy.
/// `logit_memo`, when given, caches next-token logits by prefix.
inline SampledResponse sample_response(const Weights& weights, const TokenSeq& prompt, std::size_t max_len, double temperature,
                                       Rng& rng, std::map<TokenSeq, std::vector<double>>* logit_memo = nullptr) {
  if (!(temperature >= 0.0)) throw ContractError("sample_response: temperature must be non-negative");
  if (prompt.empty()) throw ContractError("sample_response: empty prompt");
  std::optional<Weights> frozen;
  if (weights.requires_grad()) frozen = weights.clone(false);
  const Weights& w = frozen ? *frozen : weights;

  SampledResponse out;
  TokenSeq context = prompt;
  while (out.tokens.size() < max_len && context.size() < w.config.max_context) {
    std::vector<double> logits;
    if (logit_memo) {
      auto it = logit_memo->find(context);
      if (it == logit_memo->end()) it = logit_memo->emplace(context, next_token_logits(w, context)).first;
      logits = it->second;
    } else {
      logits = next_token_logits(w, context);
    }
    const std::vector<double> logp = log_softmax_values(logits);
    TokenId token = 0;
    if (temperature == 0.0) {
      token = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      std::vector<double> scaled(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
      const std::vector<double> lp = log_softmax_values(scaled);
      const double u = rng.uniform();
      double cumulative = 0.0;
      token = logits.size() - 1;
      for (std::size_t i = 0; i < lp.size(); ++i) {
        cumulative += std::exp(lp[i]);
        if (u < cumulative) {
          token = i;
          break;
        }
      }
    }
    out.tokens.push_back(token);
    out.logprobs.push_back(logp[token]);
    context.push_back(token);
    if (token == Vocabulary::kEos) break;
  }
  if (out.tokens.empty()) throw ContractError("sample_response: prompt already fills the context window");
  return out;
}

struct SequenceLogProb {
  Tensor total;      // scalar sum of per-token terms
  Tensor per_token;  // [len(response)]
};

/// Teacher-forced log pi(response | prompt). Records a graph when the
/// weights require gradients.
inline SequenceLogProb sequence_logprob(const Weights& w, const TokenSeq& prompt, const TokenSeq& response) {
  if (response.empty()) throw ContractError("sequence_logprob: empty response");
  if (prompt.empty()) throw ContractError("sequence_logprob: empty prompt");
  TokenSeq tokens = prompt;
  tokens.insert(tokens.end(), response.begin(), response.end() - 1);
  const Tensor hidden = hidden_states(w, tokens);
  std::vector<std::size_t> rows(response.size());
  std::iota(rows.begin(), rows.end(), prompt.size() - 1);
  const Tensor logits = project_to_vocab(w, ad::gather_rows(hidden, rows));
  Tensor per_token = ad::gather_cols(ad::log_softmax(logits), response);
  Tensor total = ad::sum(per_token);
  return {std::move(total), std::move(per_token)};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'M', 'O', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Weights weights;
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}
  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(u(4));
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint '" + path_ + "' is truncated");
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::map<std::string, std::string> parse_kv_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

/// Binary layout, all integers little-endian:
///   magic "SNMOECKP" | u32 version | str model-config | str metadata |
///   u32 count | count x (str name | u32 ndim | u64 dims... | f64 values...)
/// where str = u32 length + bytes and config/metadata are key=value lines.
inline std::string serialize_checkpoint(const Weights& w, const std::map<std::string, std::string>& metadata) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, w.config.to_text());
  std::string meta;
  for (const auto& [k, v] : metadata) meta += k + "=" + v + "\n";
  detail::put_str(out, meta);
  const auto params = w.registry();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const Weights& w, const std::map<std::string, std::string>& metadata = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint '" + path + "' for writing");
  const std::string bytes = serialize_checkpoint(w, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  if (r.raw(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.u(4);
  if (version != kCheckpointVersion) throw FormatError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.weights = Weights::initialize(ModelConfig::from_map(detail::parse_kv_lines(r.str())), true);
  ck.metadata = detail::parse_kv_lines(r.str());
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : ck.weights.registry()) by_name.emplace(name, t);
  const auto count = r.u(4);
  if (count != by_name.size()) throw FormatError("checkpoint '" + path + "' has " + std::to_string(count) + " parameters, config implies " + std::to_string(by_name.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint '" + path + "' has unknown parameter '" + name + "'");
    ad::Shape shape(r.u(4));
    for (auto& d : shape) d = r.u(8);
    if (shape != it->second.shape()) throw FormatError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    for (double& v : it->second.mutable_data()) v = std::bit_cast<double>(r.u(8));
  }
  if (!r.done()) throw FormatError("checkpoint '" + path + "' has trailing bytes");
  return ck;
}

}  // namespace socnav
