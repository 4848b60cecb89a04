// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file embedder.hpp
 * @brief Deterministic context-free word embeddings with synonym clusters.
 *
 * Each cluster owns a unit "center"; a member word is the normalized center
 * plus a small seeded per-word perturbation. Centers start as seeded random
 * directions and are then spread apart so that every pair of centers has
 * cosine at most kCenterCosine. With that spacing the margins below hold for
 * the whole lexicon and are checked when the provider is constructed:
 *
 *   same cluster       cosine >= 0.9
 *   different clusters cosine <= 0.3
 *
 * Out-of-lexicon words get a unit vector seeded from a hash of the word.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "socnav/error.hpp"
#include "socnav/navsim.hpp"
#include "socnav/rng.hpp"

namespace socnav {

class EmbeddingProvider {
 public:
  static constexpr std::size_t kDim = 32;
  static constexpr std::uint64_t kDefaultSeed = 0x5eed5eedULL;
  static constexpr double kPerturbation = 0.05;
  static constexpr double kCenterCosine = 0.15;
  static constexpr double kSameClusterMin = 0.9;
  static constexpr double kCrossClusterMax = 0.3;

  using Vec = std::array<double, kDim>;

  /// `entries` lists (word, cluster-name) pairs.
  explicit EmbeddingProvider(const std::vector<std::pair<std::string, std::string>>& entries,
                             std::uint64_t seed = kDefaultSeed)
      : seed_(seed) {
    std::vector<std::string> cluster_names;
    for (const auto& [word, cluster] : entries) {
      if (word.empty() || cluster.empty()) throw FormatError("lexicon entries need a word and a cluster name");
      if (cluster_of_.count(word)) throw FormatError("word '" + word + "' appears twice in the lexicon");
      cluster_of_[word] = cluster;
      words_.push_back(word);
      if (std::find(cluster_names.begin(), cluster_names.end(), cluster) == cluster_names.end()) {
        cluster_names.push_back(cluster);
      }
    }
    const auto centers = spread_centers(cluster_names);
    for (const auto& word : words_) {
      const Vec& center = centers.at(cluster_of_[word]);
      Vec jitter = random_unit(derive_seed(seed_, fnv1a64(word), 1));
      Vec v{};
      for (std::size_t i = 0; i < kDim; ++i) v[i] = center[i] + kPerturbation * jitter[i];
      vectors_[word] = normalized(v);
    }
    check_margins();
  }

  /// Lexicon covering the navigation vocabulary plus paraphrase clusters.
  static EmbeddingProvider builtin(std::uint64_t seed = kDefaultSeed) { return EmbeddingProvider(builtin_lexicon(), seed); }

  /// Plain-text lexicon: one `word<TAB>cluster-name` per line.
  static EmbeddingProvider from_file(const std::string& path, std::uint64_t seed = kDefaultSeed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon '" + path + "'");
    std::vector<std::pair<std::string, std::string>> entries;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw FormatError(path + ":" + std::to_string(line_no) + ": expected word<TAB>cluster");
      entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return EmbeddingProvider(entries, seed);
  }

  static std::vector<std::pair<std::string, std::string>> builtin_lexicon() {
    static const std::vector<std::vector<std::string>> synonyms{
        {"slow", "slowly", "gently", "gentle"},
        {"moderate", "medium", "steady", "normal"},
        {"stop", "halt", "wait"},
        {"continue", "proceed", "keep"},
        {"straight", "forward"},
        {"turn", "veer", "swerve"},
        {"slight", "slightly", "small"},
        {"speed", "pace", "velocity"},
        {"at", "with"},
        {"pedestrian", "person", "walker"},
        {"crowd", "group"},
        {"people", "persons"},
        {"left", "leftward"},
        {"right", "rightward"},
        {"clear", "free", "unobstructed"},
        {"blocked", "obstructed"},
    };
    std::vector<std::pair<std::string, std::string>> entries;
    auto has = [&](const std::string& w) {
      return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == w; });
    };
    for (const auto& group : synonyms)
      for (const auto& w : group) entries.emplace_back(w, group.front());
    const Vocabulary vocab = navsim::navigation_vocabulary();
    for (const auto& w : vocab.words()) {
      if (w.size() > 1 && w.front() == '<') continue;
      if (!has(w)) entries.emplace_back(w, w);
    }
    return entries;
  }

  bool in_lexicon(std::string_view word) const { return vectors_.count(std::string(word)) != 0; }

  std::optional<std::string> cluster_of(std::string_view word) const {
    auto it = cluster_of_.find(std::string(word));
    if (it == cluster_of_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& lexicon() const { return words_; }
  std::uint64_t seed() const { return seed_; }

  Vec embed_word(std::string_view word) const {
    auto it = vectors_.find(std::string(word));
    if (it != vectors_.end()) return it->second;
    return random_unit(derive_seed(seed_, fnv1a64(word), 2));
  }

  /// One unit row per word.
  std::vector<Vec> embed_tokens(const std::vector<std::string>& words) const {
    std::vector<Vec> rows;
    rows.reserve(words.size());
    for (const auto& w : words) rows.push_back(embed_word(w));
    return rows;
  }

  /// Normalized mean of the word vectors. Words are summed in sorted order,
  /// so any permutation of the input yields the identical vector.
  Vec embed_sentence(std::vector<std::string> words) const {
    if (words.empty()) throw ContractError("embed_sentence: empty word list");
    std::sort(words.begin(), words.end());
    Vec acc{};
    for (const auto& w : words) {
      const Vec v = embed_word(w);
      for (std::size_t i = 0; i < kDim; ++i) acc[i] += v[i];
    }
    for (double& x : acc) x /= static_cast<double>(words.size());
    return normalized(acc);
  }

  static double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < kDim; ++i) s += a[i] * b[i];
    return s;
  }

  static double cosine(const Vec& a, const Vec& b) {
    const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  }

  static Vec normalized(Vec v) {
    const double n = std::sqrt(dot(v, v));
    for (double& x : v) x /= n;
    return v;
  }

 private:
  static Vec random_unit(std::uint64_t seed) {
    Rng rng(seed);
    Vec v{};
    for (double& x : v) x = rng.normal();
    return normalized(v);
  }

  /// Seeded random centers pushed apart until all pairwise cosines are at
  /// most kCenterCosine.
  std::map<std::string, Vec> spread_centers(const std::vector<std::string>& names) const {
    std::vector<Vec> c;
    for (const auto& name : names) c.push_back(random_unit(derive_seed(seed_, fnv1a64(name), 0)));
    for (int iter = 0; iter < 5000; ++iter) {
      double worst = -1.0;
      for (std::size_t a = 0; a < c.size(); ++a) {
        for (std::size_t b = a + 1; b < c.size(); ++b) {
          const double cos_ab = dot(c[a], c[b]);
          worst = std::max(worst, cos_ab);
          if (cos_ab <= kCenterCosine - 0.02) continue;
          const double step = 0.5 * (cos_ab - kCenterCosine + 0.02);
          const Vec ca = c[a];
          for (std::size_t i = 0; i < kDim; ++i) {
            c[a][i] -= step * c[b][i];
            c[b][i] -= step * ca[i];
          }
          c[a] = normalized(c[a]);
          c[b] = normalized(c[b]);
        }
      }
      if (worst <= kCenterCosine) break;
    }
    std::map<std::string, Vec> out;
    for (std::size_t i = 0; i < names.size(); ++i) out[names[i]] = c[i];
    return out;
  }

  void check_margins() const {
    for (std::size_t a = 0; a < words_.size(); ++a) {
      for (std::size_t b = a + 1; b < words_.size(); ++b) {
        const double cs = cosine(vectors_.at(words_[a]), vectors_.at(words_[b]));
        const bool same = cluster_of_.at(words_[a]) == cluster_of_.at(words_[b]);
        if (same ? cs < kSameClusterMin : cs > kCrossClusterMax) {
          throw ContractError("embedder margin violated for '" + words_[a] + "' / '" + words_[b] +
                              "': cosine " + std::to_string(cs));
        }
      }
    }
  }

  std::uint64_t seed_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::string> cluster_of_;
  std::unordered_map<std::string, Vec> vectors_;
};

}  // namespace socnav
