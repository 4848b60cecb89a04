// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file rewards.hpp
 * @brief Response rewards: exact match, unique-character overlap and the
 *        embedding-alignment F1 used as the semantic similarity reward.
 *
 * All rewards lie in [0, 1] and are pure functions of their inputs.
 */

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <istream>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "socnav/embedder.hpp"
#include "socnav/error.hpp"
#include "socnav/vocab.hpp"

namespace socnav {

enum class RewardKind { hard, character, ssr };

inline const char* to_string(RewardKind k) {
  switch (k) {
    case RewardKind::hard: return "hard";
    case RewardKind::character: return "character";
    case RewardKind::ssr: return "ssr";
  }
  return "?";
}

inline RewardKind parse_reward_kind(std::string_view s) {
  if (s == "hard") return RewardKind::hard;
  if (s == "character") return RewardKind::character;
  if (s == "ssr") return RewardKind::ssr;
  throw ConfigError("unknown reward kind '" + std::string(s) + "' (expected hard, character or ssr)");
}

/// 1 iff the normalized texts are equal.
inline double hard_reward(std::string_view y, std::string_view g) {
  return normalize_text(y) == normalize_text(g) ? 1.0 : 0.0;
}

/// Unique non-whitespace characters of the normalized text.
inline std::set<char> unique_chars(std::string_view text) {
  std::set<char> out;
  for (char c : normalize_text(text)) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.insert(c);
  }
  return out;
}

/// |C_y intersect C_g| / max(1, |C_g|).
inline double character_reward(std::string_view y, std::string_view g) {
  const auto cy = unique_chars(y), cg = unique_chars(g);
  std::size_t common = 0;
  for (char c : cg) common += cy.count(c);
  return static_cast<double>(common) / static_cast<double>(std::max<std::size_t>(1, cg.size()));
}

struct SimilarityMatrix {
  std::vector<std::string> generated;  // rows
  std::vector<std::string> reference;  // columns
  std::vector<double> values;          // row-major, |generated| x |reference|

  double at(std::size_t j, std::size_t k) const { return values[j * reference.size() + k]; }
};

/// Pairwise token cosines. Equal words score exactly 1.
inline SimilarityMatrix similarity_matrix(const std::vector<std::string>& generated, const std::vector<std::string>& reference,
                                          const EmbeddingProvider& embedder) {
  SimilarityMatrix s{generated, reference, std::vector<double>(generated.size() * reference.size())};
  const auto ey = embedder.embed_tokens(generated), eg = embedder.embed_tokens(reference);
  for (std::size_t j = 0; j < generated.size(); ++j) {
    for (std::size_t k = 0; k < reference.size(); ++k) {
      s.values[j * reference.size() + k] = generated[j] == reference[k] ? 1.0 : EmbeddingProvider::cosine(ey[j], eg[k]);
    }
  }
  return s;
}

struct BertScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // an input had no tokens
};

inline double harmonic_f1(double p, double r) { return p + r > 0.0 ? 2.0 * (p * r) / (p + r) : 0.0; }

/// Greedy token alignment: recall averages each reference token's best match
/// among generated tokens, precision each generated token's best match among
/// reference tokens.
inline BertScore bertscore(std::string_view y, std::string_view g, const EmbeddingProvider& embedder) {
  const auto gen = split_words(normalize_text(y)), ref = split_words(normalize_text(g));
  if (gen.empty() || ref.empty()) return {0.0, 0.0, 0.0, true};
  const SimilarityMatrix s = similarity_matrix(gen, ref, embedder);
  double p = 0.0, r = 0.0;
  for (std::size_t j = 0; j < gen.size(); ++j) {
    double best = -1.0;
    for (std::size_t k = 0; k < ref.size(); ++k) best = std::max(best, s.at(j, k));
    p += best;
  }
  for (std::size_t k = 0; k < ref.size(); ++k) {
    double best = -1.0;
    for (std::size_t j = 0; j < gen.size(); ++j) best = std::max(best, s.at(j, k));
    r += best;
  }
  p /= static_cast<double>(gen.size());
  r /= static_cast<double>(ref.size());
  return {p, r, harmonic_f1(p, r), false};
}

inline double ssr_reward(std::string_view y, std::string_view g, const EmbeddingProvider& embedder) {
  return std::clamp(bertscore(y, g, embedder).f1, 0.0, 1.0);
}

struct RewardSpec {
  RewardKind kind = RewardKind::ssr;
  std::shared_ptr<const EmbeddingProvider> embedder;

  void validate() const {
    if (kind == RewardKind::ssr && !embedder) throw ConfigError("reward kind ssr requires an embedder");
  }

  double operator()(std::string_view y, std::string_view g) const {
    switch (kind) {
      case RewardKind::hard: return hard_reward(y, g);
      case RewardKind::character: return character_reward(y, g);
      case RewardKind::ssr:
        validate();
        return ssr_reward(y, g, *embedder);
    }
    return 0.0;
  }
};

/// Reads `generated<TAB>reference` lines and writes one CSV row per pair:
/// pair,precision,recall,f1,hard,character,ssr
inline std::size_t score_pairs(std::istream& in, std::ostream& out, const EmbeddingProvider& embedder) {
  out << "pair,precision,recall,f1,hard,character,ssr\n";
  std::size_t index = 0, line_no = 0;
  char buf[256];
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("pairs line " + std::to_string(line_no) + ": expected generated<TAB>reference");
    const std::string y = line.substr(0, tab), g = line.substr(tab + 1);
    const BertScore b = bertscore(y, g, embedder);
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", index++, b.precision, b.recall, b.f1,
                  hard_reward(y, g), character_reward(y, g), std::clamp(b.f1, 0.0, 1.0));
    out << buf;
  }
  return index;
}

}  // namespace socnav
