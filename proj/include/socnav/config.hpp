// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file config.hpp
 * @brief Run configuration: flat `key = value` pairs grouped in sections.
 *
 *   [run]      seed, turns
 *   [data]     train_n, test_n, seed, augment
 *   [model]    d_model, layers, heads, ffn_hidden, experts, top_k,
 *              max_context, moe, init_seed
 *   [sft]      epochs, lr, batch_size, grad_clip
 *   [rft]      algorithm, reward, group_size, clip_eps, kl_beta, lr,
 *              momentum, epochs, batch_size, temperature, max_response_len,
 *              std_floor, grad_clip
 *   [moeft]    epochs, lr, batch_size, grad_clip
 *   [eval]     sinkhorn_lambda, sinkhorn_tol, sinkhorn_max_iter, warmup,
 *              max_turn_len, max_action_len
 *   [embedder] seed, lexicon
 *
 * Missing keys keep their defaults; unknown sections or keys are errors.
 * The canonical rendering (every key, fixed order) is hashed to give the
 * config hash stamped into artifacts.
 */

#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "socnav/error.hpp"
#include "socnav/metrics.hpp"
#include "socnav/moe_policy.hpp"
#include "socnav/navsim.hpp"
#include "socnav/pipeline.hpp"
#include "socnav/rewards.hpp"
#include "socnav/rft.hpp"
#include "socnav/rng.hpp"

namespace socnav {

struct DataConfig {
  std::size_t train_n = 64;
  std::size_t test_n = 32;
  std::uint64_t seed = 7;
  bool augment = true;
};

struct RunConfig {
  std::uint64_t seed = 1;
  navsim::TurnMode turns = navsim::TurnMode::multi;
  DataConfig data;
  ModelConfig model;  // vocab_size is filled from the vocabulary
  StagePlan sft{Stage::sft, 20, 3e-4, 8, 1.0};
  RftConfig rft;
  RewardKind reward = RewardKind::ssr;
  StagePlan moeft{Stage::moeft, 20, 3e-5, 8, 1.0};
  EvalConfig eval;
  std::uint64_t embedder_seed = EmbeddingProvider::kDefaultSeed;
  std::string lexicon;  // empty: built-in lexicon

  RunConfig() {
    model.vocab_size = navsim::navigation_vocabulary().size();
    rft.lr = 5e-3;
  }

  StagePlan plan(Stage s) const {
    StagePlan p = s == Stage::moeft ? moeft : sft;
    p.turns = s == Stage::moeft ? navsim::TurnMode::multi : turns;
    return p;
  }

  EvalConfig eval_config() const {
    EvalConfig e = eval;
    e.turns = turns;
    return e;
  }

  void validate() const {
    if (data.train_n == 0) throw ConfigError("data.train_n must be positive");
    if (data.test_n == 0) throw ConfigError("data.test_n must be positive");
    model.validate();
    sft.validate();
    rft.validate();
    moeft.validate();
    eval.sinkhorn.validate();
    if (eval.inference.max_action_len == 0 || eval.inference.max_turn_len == 0) throw ConfigError("eval generation lengths must be positive");
  }

  /// Every key in a fixed order.
  std::string to_text() const {
    std::ostringstream out;
    auto num = [&](const char* key, double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << key << " = " << buf << '\n';
    };
    auto u = [&](const char* key, std::uint64_t v) { out << key << " = " << v << '\n'; };
    auto str = [&](const char* key, const std::string& v) { out << key << " = " << v << '\n'; };
    out << "[run]\n";
    u("seed", seed);
    str("turns", navsim::to_string(turns));
    out << "\n[data]\n";
    u("train_n", data.train_n);
    u("test_n", data.test_n);
    u("seed", data.seed);
    str("augment", data.augment ? "true" : "false");
    out << "\n[model]\n";
    u("d_model", model.d_model);
    u("layers", model.num_layers);
    u("heads", model.num_heads);
    u("ffn_hidden", model.ffn_hidden);
    u("experts", model.num_experts);
    u("top_k", model.top_k);
    u("max_context", model.max_context);
    str("moe", model.moe ? "true" : "false");
    u("init_seed", model.init_seed);
    for (const auto* p : {&sft, &moeft}) {
      out << "\n[" << to_string(p->stage) << "]\n";
      u("epochs", p->epochs);
      num("lr", p->lr);
      u("batch_size", p->batch_size);
      num("grad_clip", p->grad_clip);
      if (p == &sft) {
        out << "\n[rft]\n";
        str("algorithm", to_string(rft.algorithm));
        str("reward", to_string(reward));
        u("group_size", rft.group_size);
        num("clip_eps", rft.clip_eps);
        num("kl_beta", rft.kl_beta);
        num("lr", rft.lr);
        num("momentum", rft.momentum);
        u("epochs", rft.epochs);
        u("batch_size", rft.batch_size);
        num("temperature", rft.temperature);
        u("max_response_len", rft.max_response_len);
        num("std_floor", rft.std_floor);
        num("grad_clip", rft.grad_clip);
      }
    }
    out << "\n[eval]\n";
    num("sinkhorn_lambda", eval.sinkhorn.lambda);
    num("sinkhorn_tol", eval.sinkhorn.tolerance);
    u("sinkhorn_max_iter", eval.sinkhorn.max_iterations);
    u("warmup", eval.warmup);
    u("max_turn_len", eval.inference.max_turn_len);
    u("max_action_len", eval.inference.max_action_len);
    out << "\n[embedder]\n";
    u("seed", embedder_seed);
    str("lexicon", lexicon);
    return out.str();
  }

  /// 16 hex digits of FNV-1a over the canonical text.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_text())));
    return buf;
  }

  /// Applies `key = value` pairs from INI text on top of the defaults.
  static RunConfig parse(const std::string& text, const std::string& source = "<config>") {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
      boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    const auto setters = c.setters();
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) throw ConfigError(source + ": key '" + section + "' must sit inside a [section]");
      for (const auto& [key, value] : body) {
        const std::string field = section + "." + key;
        auto it = setters.find(field);
        if (it == setters.end()) throw ConfigError(source + ": unknown config field '" + field + "'");
        it->second(value.data());
      }
    }
    c.validate();
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

 private:
  using Setter = std::function<void(const std::string&)>;

  std::map<std::string, Setter> setters() {
    std::map<std::string, Setter> s;
    auto size = [&](const std::string& field, std::size_t& dst) {
      s[field] = [field, &dst](const std::string& v) { dst = static_cast<std::size_t>(parse_unsigned(field, v)); };
    };
    auto u64 = [&](const std::string& field, std::uint64_t& dst) {
      s[field] = [field, &dst](const std::string& v) { dst = parse_unsigned(field, v); };
    };
    auto real = [&](const std::string& field, double& dst) {
      s[field] = [field, &dst](const std::string& v) { dst = parse_real(field, v); };
    };
    auto flag = [&](const std::string& field, bool& dst) {
      s[field] = [field, &dst](const std::string& v) {
        if (v == "true" || v == "1") dst = true;
        else if (v == "false" || v == "0") dst = false;
        else throw ConfigError("config field '" + field + "' expects true or false, got '" + v + "'");
      };
    };
    u64("run.seed", seed);
    s["run.turns"] = [this](const std::string& v) {
      if (v == "multi") turns = navsim::TurnMode::multi;
      else if (v == "single") turns = navsim::TurnMode::single;
      else throw ConfigError("config field 'run.turns' expects single or multi, got '" + v + "'");
    };
    size("data.train_n", data.train_n);
    size("data.test_n", data.test_n);
    u64("data.seed", data.seed);
    flag("data.augment", data.augment);
    size("model.d_model", model.d_model);
    size("model.layers", model.num_layers);
    size("model.heads", model.num_heads);
    size("model.ffn_hidden", model.ffn_hidden);
    size("model.experts", model.num_experts);
    size("model.top_k", model.top_k);
    size("model.max_context", model.max_context);
    flag("model.moe", model.moe);
    u64("model.init_seed", model.init_seed);
    for (StagePlan* p : {&sft, &moeft}) {
      const std::string n = to_string(p->stage);
      size(n + ".epochs", p->epochs);
      real(n + ".lr", p->lr);
      size(n + ".batch_size", p->batch_size);
      real(n + ".grad_clip", p->grad_clip);
    }
    s["rft.algorithm"] = [this](const std::string& v) { rft.algorithm = parse_rft_algorithm(v); };
    s["rft.reward"] = [this](const std::string& v) { reward = parse_reward_kind(v); };
    size("rft.group_size", rft.group_size);
    real("rft.clip_eps", rft.clip_eps);
    real("rft.kl_beta", rft.kl_beta);
    real("rft.lr", rft.lr);
    real("rft.momentum", rft.momentum);
    size("rft.epochs", rft.epochs);
    size("rft.batch_size", rft.batch_size);
    real("rft.temperature", rft.temperature);
    size("rft.max_response_len", rft.max_response_len);
    real("rft.std_floor", rft.std_floor);
    real("rft.grad_clip", rft.grad_clip);
    real("eval.sinkhorn_lambda", eval.sinkhorn.lambda);
    real("eval.sinkhorn_tol", eval.sinkhorn.tolerance);
    size("eval.sinkhorn_max_iter", eval.sinkhorn.max_iterations);
    size("eval.warmup", eval.warmup);
    size("eval.max_turn_len", eval.inference.max_turn_len);
    size("eval.max_action_len", eval.inference.max_action_len);
    u64("embedder.seed", embedder_seed);
    s["embedder.lexicon"] = [this](const std::string& v) { lexicon = v; };
    return s;
  }

  static std::uint64_t parse_unsigned(const std::string& field, const std::string& v) {
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config field '" + field + "' expects a non-negative integer, got '" + v + "'");
    return out;
  }

  static double parse_real(const std::string& field, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(out)) throw ConfigError("config field '" + field + "' expects a number, got '" + v + "'");
    return out;
  }
};

/// Embedder selected by the config.
inline std::shared_ptr<const EmbeddingProvider> make_embedder(const RunConfig& c) {
  if (c.lexicon.empty()) return std::make_shared<const EmbeddingProvider>(EmbeddingProvider::builtin(c.embedder_seed));
  return std::make_shared<const EmbeddingProvider>(EmbeddingProvider::from_file(c.lexicon, c.embedder_seed));
}

}  // namespace socnav
