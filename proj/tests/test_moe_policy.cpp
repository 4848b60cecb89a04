// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "socnav/moe_policy.hpp"
#include "socnav/navsim.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

using ad::Tensor;
using testing::random_tensor;
using testing::expert_oracle;
using testing::first_moe;
using testing::softmax_oracle;
using testing::tiny_config;

TEST(Routing, SoftmaxWeightsSumToOne) {
  const Weights w = Weights::initialize(tiny_config(6, 4, 2), false);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const RouteResult r = route(random_tensor({8}, 100 + s, 2.0, false), first_moe(w), w.config.router());
    double total = 0.0;
    for (double p : r.weights.data()) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(r.selected.size(), 2u);
  }
}

TEST(Routing, ExactlyKExpertEvaluationsPerToken) {
  for (std::size_t k = 1; k <= 4; ++k) {
    const Weights w = Weights::initialize(tiny_config(6, 4, k), false);
    RoutingStats stats;
    (void)moe_forward_rows(random_tensor({7, 8}, 200 + k, 1.0, false), first_moe(w), w.config.router(), &stats);
    EXPECT_EQ(stats.expert_evaluations, 7 * k) << "k=" << k;
    EXPECT_EQ(stats.routed_tokens, 7u);
    std::size_t hist = 0;
    for (std::size_t c : stats.expert_tokens[0]) hist += c;
    EXPECT_EQ(hist, 7 * k);
  }
}

TEST(Routing, FullTopKEqualsDenseMixture) {
  const Weights w = Weights::initialize(tiny_config(6, 3, 3), false);
  const MoELayer& layer = first_moe(w);
  const Tensor x = random_tensor({5, 8}, 300, 1.0, false);
  const Tensor y = moe_forward_rows(x, layer, w.config.router());
  for (std::size_t r = 0; r < 5; ++r) {
    const auto row = x.data().subspan(r * 8, 8);
    const auto gate = softmax_oracle(row, layer);
    std::vector<double> mix(8, 0.0);
    for (std::size_t e = 0; e < 3; ++e) {
      const auto out = expert_oracle(row, layer.experts[e]);
      for (std::size_t i = 0; i < 8; ++i) mix[i] += gate[e] * out[i];
    }
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y.at(r, i), mix[i], 1e-12);
  }
}

TEST(Routing, SparseOutputMatchesSelectedExpertsOnly) {
  const Weights w = Weights::initialize(tiny_config(6, 4, 2), false);
  const MoELayer& layer = first_moe(w);
  const Tensor x = random_tensor({4, 8}, 310, 1.0, false);
  const Tensor y = moe_forward_rows(x, layer, w.config.router());
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = x.data().subspan(r * 8, 8);
    const auto gate = softmax_oracle(row, layer);
    std::vector<std::size_t> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return gate[a] > gate[b]; });
    std::vector<double> mix(8, 0.0);
    for (std::size_t e : {order[0], order[1]}) {
      const auto out = expert_oracle(row, layer.experts[e]);
      for (std::size_t i = 0; i < 8; ++i) mix[i] += gate[e] * out[i];
    }
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y.at(r, i), mix[i], 1e-12);
  }
}

TEST(Routing, UnselectedExpertsReceiveNoGradient) {
  const Weights w = Weights::initialize(tiny_config(6, 4, 1), true);
  const MoELayer& layer = first_moe(w);
  const Tensor x = random_tensor({1, 8}, 400, 1.0, false);
  const RouteResult r = route(ad::reshape(x, {8}), layer, w.config.router());
  ad::backward(ad::sum(moe_forward_rows(x, layer, w.config.router())));
  for (std::size_t e = 0; e < 4; ++e) {
    const FeedForward& f = layer.experts[e];
    double norm = 0.0;
    for (const Tensor* t : {&f.w1, &f.b1, &f.w2, &f.b2}) {
      for (double g : t->grad()) norm += g * g;
    }
    if (e == r.selected[0]) {
      EXPECT_GT(norm, 0.0);
    } else {
      EXPECT_EQ(norm, 0.0) << "expert " << e;
    }
  }
  // The router itself is trained through the gate of the chosen expert.
  double router_norm = 0.0;
  for (double g : layer.router_w.grad()) router_norm += g * g;
  EXPECT_GT(router_norm, 0.0);
}

TEST(Routing, TiesGoToLowerIndex) {
  const std::vector<double> flat{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(top_k_indices(flat, 2), (std::vector<std::size_t>{0, 1}));
  const std::vector<double> mixed{0.1, 0.3, 0.3, 0.3};
  EXPECT_EQ(top_k_indices(mixed, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k_indices(mixed, 4), (std::vector<std::size_t>{1, 2, 3, 0}));

  Weights w = Weights::initialize(tiny_config(6, 4, 3), false);
  MoELayer layer = first_moe(w);
  layer.router_w = Tensor::zeros(layer.router_w.shape());
  layer.router_b = Tensor::zeros(layer.router_b.shape());
  for (int rep = 0; rep < 3; ++rep) {
    const RouteResult r = route(random_tensor({8}, 500 + rep, 1.0, false), layer, w.config.router());
    EXPECT_EQ(r.selected, (std::vector<std::size_t>{0, 1, 2}));
  }
}

TEST(Routing, InvalidRouterConfigRejected) {
  EXPECT_THROW((RouterConfig{4, 0}.validate()), ConfigError);
  EXPECT_THROW((RouterConfig{4, 5}.validate()), ConfigError);
  EXPECT_THROW((RouterConfig{0, 1}.validate()), ConfigError);
}

TEST(ModelShape, ParameterCountMatchesClosedForm) {
  ModelConfig c;
  c.vocab_size = navsim::navigation_vocabulary().size();
  const std::size_t d = c.d_model, h = c.ffn_hidden, V = c.vocab_size, K = c.num_experts;
  const std::size_t ffn = d * h + h + h * d + d;
  const std::size_t shared = 2 * d + 4 * d * d + d + 2 * d;
  std::size_t expected = V * d + c.max_context * d + 2 * d + d * V + V;
  for (std::size_t i = 0; i < c.num_layers; ++i) expected += shared + (i % 2 == 1 ? d * K + K + K * ffn : ffn);
  EXPECT_EQ(Weights::initialize(c, false).parameter_count(), expected);
  EXPECT_EQ(parameter_count(PolicyModel(c)), expected);
}

TEST(ModelShape, RegistryNamesAreUniqueAndStable) {
  const Weights w = Weights::initialize(tiny_config(6, 2, 1), false);
  std::set<std::string> names;
  for (const auto& [name, t] : w.registry()) EXPECT_TRUE(names.insert(name).second) << name;
  EXPECT_TRUE(names.count("blocks.0.ffn.w1"));
  EXPECT_TRUE(names.count("blocks.1.moe.router.weight"));
  EXPECT_TRUE(names.count("blocks.1.moe.experts.1.w2"));
  EXPECT_FALSE(names.count("blocks.1.ffn.w1"));
}

TEST(ModelShape, SingleExpertModelEqualsDenseModel) {
  ModelConfig dense = tiny_config(6, 1, 1);
  dense.moe = false;
  ModelConfig moe = tiny_config(6, 1, 1);
  const TokenSeq tokens{2, 3, 4, 5, 2};
  const Tensor a = forward(Weights::initialize(dense, false), tokens), b = forward(Weights::initialize(moe, false), tokens);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ModelShape, ForwardRejectsBadTokens) {
  const Weights w = Weights::initialize(tiny_config(), false);
  EXPECT_THROW(forward(w, {}), ContractError);
  EXPECT_THROW(forward(w, TokenSeq(17, 2)), ContractError);
  EXPECT_THROW(forward(w, {2, 6}), VocabularyError);
}

TEST(ModelShape, CausalPrefixInvariance) {
  const Weights w = Weights::initialize(tiny_config(), false);
  const Tensor full = forward(w, {2, 3, 4, 5}), prefix = forward(w, {2, 3});
  for (std::size_t i = 0; i < prefix.size(); ++i) EXPECT_EQ(full[i], prefix[i]);
}

TEST(Sampling, LogprobsReproduceUnderScoring) {
  const Weights w = Weights::initialize(tiny_config(), false);
  Rng rng(7);
  const SampledResponse r = sample_response(w, {2, 3}, 6, 1.0, rng);
  ASSERT_FALSE(r.tokens.empty());
  const SequenceLogProb lp = sequence_logprob(w, {2, 3}, r.tokens);
  ASSERT_EQ(lp.per_token.size(), r.logprobs.size());
  double total = 0.0;
  for (std::size_t t = 0; t < r.logprobs.size(); ++t) {
    EXPECT_EQ(lp.per_token[t], r.logprobs[t]);
    total += r.logprobs[t];
  }
  EXPECT_NEAR(lp.total.item(), total, 1e-12);
}

TEST(Sampling, SeededAndGreedy) {
  const Weights w = Weights::initialize(tiny_config(), false);
  Rng a(11), b(11);
  EXPECT_EQ(sample_response(w, {2}, 8, 1.0, a).tokens, sample_response(w, {2}, 8, 1.0, b).tokens);
  Rng g(1);
  const SampledResponse greedy = sample_response(w, {2, 4}, 1, 0.0, g);
  const auto logits = next_token_logits(w, {2, 4});
  const auto best = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  EXPECT_EQ(greedy.tokens.front(), best);
  EXPECT_THROW(sample_response(w, {2}, 4, -1.0, g), ContractError);
}

TEST(Sampling, StopsAtEos) {
  Weights w = Weights::initialize(tiny_config(), false);
  w.head_b.mutable_data()[Vocabulary::kEos] = 100.0;
  Rng rng(3);
  const SampledResponse r = sample_response(w, {2}, 5, 1.0, rng);
  EXPECT_EQ(r.tokens, (TokenSeq{Vocabulary::kEos}));
}

TEST(Snapshots, FrozenAgainstLaterUpdates) {
  PolicyModel m(tiny_config());
  const PolicySnapshot snap = m.snapshot();
  const double before = snap.weights().head_w[0];
  for (auto& [name, t] : m.parameters()) {
    if (name == "head.weight") t.mutable_data()[0] += 1.0;
  }
  ASSERT_NE(m.weights().head_w[0], before);
  EXPECT_EQ(snap.weights().head_w[0], before);
  EXPECT_FALSE(snap.weights().requires_grad());
}

TEST(Checkpoint, RoundTripIsBitwise) {
  testing::TempDir dir("ckpt");
  const Weights w = Weights::initialize(tiny_config(6, 3, 2), false);
  save_checkpoint(dir.file("a.ckpt"), w, {{"stage", "sft"}, {"seed", "4"}});
  const Checkpoint ck = load_checkpoint(dir.file("a.ckpt"));
  EXPECT_EQ(ck.weights.config, w.config);
  EXPECT_EQ(ck.metadata.at("stage"), "sft");
  const auto a = w.registry(), b = ck.weights.registry();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    for (std::size_t j = 0; j < a[i].second.size(); ++j) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i].second[j]), std::bit_cast<std::uint64_t>(b[i].second[j]));
  }
  EXPECT_EQ(serialize_checkpoint(w, {{"k", "v"}}), serialize_checkpoint(ck.weights, {{"k", "v"}}));
}

TEST(Checkpoint, CorruptFilesRejected) {
  testing::TempDir dir("ckpt-bad");
  EXPECT_THROW(load_checkpoint(dir.file("missing.ckpt")), IoError);
  {
    std::ofstream(dir.file("magic.ckpt")) << "NOTACKPT and more bytes";
  }
  EXPECT_THROW(load_checkpoint(dir.file("magic.ckpt")), FormatError);
  const std::string bytes = serialize_checkpoint(Weights::initialize(tiny_config(), false), {});
  {
    std::ofstream out(dir.file("short.ckpt"), std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir.file("short.ckpt")), FormatError);
}

TEST(ModelConfigText, RoundTrips) {
  const ModelConfig c = tiny_config(9, 3, 2);
  std::map<std::string, std::string> kv;
  std::istringstream in(c.to_text());
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  EXPECT_EQ(ModelConfig::from_map(kv), c);
}

}  // namespace
}  // namespace socnav
