// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "socnav/embedder.hpp"
#include "test_util.hpp"

namespace socnav {
namespace {

using Vec = EmbeddingProvider::Vec;

double norm(const Vec& v) { return std::sqrt(EmbeddingProvider::dot(v, v)); }

TEST(Embedder, BuiltinMarginsHoldOverWholeLexicon) {
  const auto e = EmbeddingProvider::builtin();
  const auto& words = e.lexicon();
  ASSERT_GT(words.size(), 40u);
  for (std::size_t a = 0; a < words.size(); ++a) {
    EXPECT_NEAR(norm(e.embed_word(words[a])), 1.0, 1e-12);
    for (std::size_t b = a + 1; b < words.size(); ++b) {
      const double c = EmbeddingProvider::cosine(e.embed_word(words[a]), e.embed_word(words[b]));
      if (e.cluster_of(words[a]) == e.cluster_of(words[b])) {
        EXPECT_GE(c, 0.9) << words[a] << "/" << words[b];
      } else {
        EXPECT_LE(c, 0.3) << words[a] << "/" << words[b];
      }
    }
  }
}

TEST(Embedder, CoversNavigationVocabulary) {
  const auto e = EmbeddingProvider::builtin();
  const Vocabulary vocab = navsim::navigation_vocabulary();
  for (const auto& w : vocab.words()) {
    if (w.front() == '<') continue;
    EXPECT_TRUE(e.in_lexicon(w)) << w;
  }
}

TEST(Embedder, NamedPairs) {
  const auto e = EmbeddingProvider::builtin();
  EXPECT_GE(EmbeddingProvider::cosine(e.embed_word("slow"), e.embed_word("slowly")), 0.9);
  EXPECT_LE(EmbeddingProvider::cosine(e.embed_word("slow"), e.embed_word("left")), 0.3);
}

TEST(Embedder, DeterministicAcrossInstances) {
  const auto a = EmbeddingProvider::builtin(), b = EmbeddingProvider::builtin();
  EXPECT_EQ(a.embed_word("stop"), b.embed_word("stop"));
  EXPECT_EQ(a.embed_word("stop"), a.embed_word("stop"));
  EXPECT_EQ(a.embed_word("zebra"), b.embed_word("zebra"));
  EXPECT_NEAR(norm(a.embed_word("zebra")), 1.0, 1e-12);
  EXPECT_NE(a.embed_word("stop"), EmbeddingProvider::builtin(7).embed_word("stop"));
}

TEST(Embedder, EmbedTokensRowsAreWordVectors) {
  const auto e = EmbeddingProvider::builtin();
  const auto rows = e.embed_tokens({"stop", "left", "stop"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], e.embed_word("stop"));
  EXPECT_EQ(rows[1], e.embed_word("left"));
  EXPECT_EQ(rows[2], rows[0]);
}

TEST(Embedder, SentenceVector) {
  const auto e = EmbeddingProvider::builtin();
  const Vec one = e.embed_sentence({"stop"}), word = e.embed_word("stop");
  for (std::size_t i = 0; i < EmbeddingProvider::kDim; ++i) EXPECT_NEAR(one[i], word[i], 1e-15);
  EXPECT_EQ(e.embed_sentence({"slight", "left", "turn"}), e.embed_sentence({"turn", "slight", "left"}));
  const Vec s = e.embed_sentence({"continue", "straight"});
  EXPECT_NEAR(norm(s), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(EmbeddingProvider::cosine(s, s), 1.0);
  EXPECT_THROW(e.embed_sentence({}), ContractError);
}

TEST(Embedder, LexiconFileOverride) {
  testing::TempDir dir("lexicon");
  {
    std::ofstream out(dir.file("lex.tsv"));
    out << "# comment\nfast\tspeed\nquick\tspeed\nhalt\tstop\n";
  }
  const auto e = EmbeddingProvider::from_file(dir.file("lex.tsv"));
  EXPECT_EQ(e.lexicon().size(), 3u);
  EXPECT_GE(EmbeddingProvider::cosine(e.embed_word("fast"), e.embed_word("quick")), 0.9);
  EXPECT_LE(EmbeddingProvider::cosine(e.embed_word("fast"), e.embed_word("halt")), 0.3);
  {
    std::ofstream out(dir.file("bad.tsv"));
    out << "no tab here\n";
  }
  EXPECT_THROW(EmbeddingProvider::from_file(dir.file("bad.tsv")), FormatError);
  EXPECT_THROW(EmbeddingProvider::from_file(dir.file("absent.tsv")), IoError);
}

}  // namespace
}  // namespace socnav
