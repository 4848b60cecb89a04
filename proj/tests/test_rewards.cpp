// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "socnav/rewards.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

const EmbeddingProvider& lexicon() {
  static const EmbeddingProvider e = EmbeddingProvider::builtin();
  return e;
}

/// Greedy-alignment scores recomputed from an explicitly built cosine matrix.
BertScore bertscore_oracle(const std::string& y, const std::string& g) {
  const auto gen = split_words(normalize_text(y)), ref = split_words(normalize_text(g));
  std::vector<std::vector<double>> sim(gen.size(), std::vector<double>(ref.size()));
  for (std::size_t j = 0; j < gen.size(); ++j) {
    for (std::size_t k = 0; k < ref.size(); ++k) {
      sim[j][k] = gen[j] == ref[k] ? 1.0 : EmbeddingProvider::cosine(lexicon().embed_word(gen[j]), lexicon().embed_word(ref[k]));
    }
  }
  double p = 0.0, r = 0.0;
  for (std::size_t j = 0; j < gen.size(); ++j) p += *std::max_element(sim[j].begin(), sim[j].end());
  for (std::size_t k = 0; k < ref.size(); ++k) {
    double best = -1.0;
    for (std::size_t j = 0; j < gen.size(); ++j) best = std::max(best, sim[j][k]);
    r += best;
  }
  p /= static_cast<double>(gen.size());
  r /= static_cast<double>(ref.size());
  return {p, r, 2.0 * p * r / (p + r), false};
}

TEST(HardReward, ExactAfterNormalization) {
  EXPECT_EQ(hard_reward("stop", "stop"), 1.0);
  EXPECT_EQ(hard_reward("stop", "slow down"), 0.0);
  EXPECT_EQ(hard_reward("  Stop ", "stop"), 1.0);
  EXPECT_EQ(hard_reward("slight  LEFT turn", "slight left turn"), 1.0);
}

TEST(CharacterReward, HandEnumeratedSets) {
  EXPECT_EQ(character_reward("turn", "turns"), 0.8);
  EXPECT_EQ(character_reward("stop", "stop"), 1.0);
  EXPECT_EQ(character_reward("", "stop"), 0.0);
  EXPECT_EQ(character_reward("stop", ""), 0.0);
  // {s,t,o,p} against {p,o,t}: all three reference characters present.
  EXPECT_EQ(character_reward("stop", "pot"), 1.0);
  // Whitespace is ignored: {a,t} of "at" against {a,t,s,l,o,w}... 2/6.
  EXPECT_DOUBLE_EQ(character_reward("a t", "at slow"), 2.0 / 6.0);
}

TEST(Bertscore, IdenticalTextsScoreOneExactly) {
  for (const auto& a : navsim::action_texts()) {
    const BertScore b = bertscore(a, a, lexicon());
    EXPECT_EQ(b.precision, 1.0);
    EXPECT_EQ(b.recall, 1.0);
    EXPECT_EQ(b.f1, 1.0);
  }
}

TEST(Bertscore, MatchesMatrixOracle) {
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"slight left turn at slow speed", "slight right turn at slow speed"},
      {"proceed forward", "continue straight at moderate speed"},
      {"stop", "slight left turn at slow speed"},
      {"halt now please", "stop"},
  };
  for (const auto& [y, g] : pairs) {
    const BertScore got = bertscore(y, g, lexicon()), want = bertscore_oracle(y, g);
    EXPECT_NEAR(got.precision, want.precision, 1e-15) << y << " | " << g;
    EXPECT_NEAR(got.recall, want.recall, 1e-15);
    EXPECT_NEAR(got.f1, want.f1, 1e-15);
  }
}

TEST(Bertscore, LowSimilarityClustersStayBelowMargin) {
  EXPECT_LE(bertscore("crowd people", "slow speed", lexicon()).f1, 0.3);
  EXPECT_LE(bertscore("left", "stop", lexicon()).f1, 0.3);
}

TEST(Bertscore, EmptyInputIsDegenerate) {
  const BertScore b = bertscore("", "stop", lexicon());
  EXPECT_TRUE(b.degenerate);
  EXPECT_EQ(b.f1, 0.0);
  EXPECT_EQ(ssr_reward("stop", "   ", lexicon()), 0.0);
}

TEST(SsrReward, OrderingOverConstructedTriples) {
  const auto triples = testing::reward_triples(lexicon());
  ASSERT_GE(triples.size(), 6u);
  for (const auto& t : triples) {
    const double exact = ssr_reward(t.reference, t.reference, lexicon());
    const double para = ssr_reward(t.paraphrase, t.reference, lexicon());
    const double unrelated = ssr_reward(t.unrelated, t.reference, lexicon());
    EXPECT_EQ(exact, 1.0) << t.reference;
    EXPECT_GT(exact, para) << t.reference << " / " << t.paraphrase;
    EXPECT_GT(para, unrelated) << t.reference << " / " << t.unrelated;
  }
}

TEST(SsrReward, ClampedToUnitInterval) {
  // Unknown words get pseudo-random vectors whose cosines may be negative.
  for (const char* y : {"zebra quartz", "xylophone", "qqq www eee"}) {
    const double r = ssr_reward(y, "stop", lexicon());
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(RewardSpec, HardImpliesOtherRewardsAreOne) {
  for (const auto& a : navsim::action_texts()) {
    for (RewardKind k : {RewardKind::hard, RewardKind::character, RewardKind::ssr}) {
      const RewardSpec spec{k, std::make_shared<const EmbeddingProvider>(lexicon())};
      EXPECT_EQ(spec(a, a), 1.0) << to_string(k);
    }
  }
}

TEST(RewardSpec, Validation) {
  EXPECT_THROW((RewardSpec{RewardKind::ssr, nullptr}.validate()), ConfigError);
  EXPECT_NO_THROW((RewardSpec{RewardKind::hard, nullptr}.validate()));
  EXPECT_EQ(parse_reward_kind("character"), RewardKind::character);
  EXPECT_THROW(parse_reward_kind("bleu"), ConfigError);
}

TEST(ScorePairs, CsvRowsPerPair) {
  std::istringstream in("stop\tstop\nslight left turn\tslight right turn\n\n");
  std::ostringstream out;
  EXPECT_EQ(score_pairs(in, out, lexicon()), 2u);
  std::istringstream lines(out.str());
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(header, "pair,precision,recall,f1,hard,character,ssr");
  EXPECT_EQ(first, "0,1,1,1,1,1,1");
  std::istringstream bad("no tab");
  EXPECT_THROW(score_pairs(bad, out, lexicon()), FormatError);
}

}  // namespace
}  // namespace socnav
