// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "socnav/error.hpp"

namespace socnav {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

/// Lowercases, trims and collapses runs of whitespace to a single space.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

/// Word-level vocabulary. Ids 0 and 1 are always end-of-sequence and padding.
class Vocabulary {
 public:
  static constexpr TokenId kEos = 0;
  static constexpr TokenId kPad = 1;

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_[kEos] != "<eos>" || words_[kPad] != "<pad>") {
      throw ContractError("vocabulary must start with <eos> and <pad>");
    }
    for (TokenId i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) throw ContractError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }

  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }

  TokenId id(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) throw VocabularyError("word '" + std::string(w) + "' is not in the vocabulary");
    return it->second;
  }

  const std::string& word(TokenId id) const {
    if (id >= words_.size()) throw VocabularyError("token id " + std::to_string(id) + " is out of range");
    return words_[id];
  }

  const std::vector<std::string>& words() const { return words_; }

  TokenSeq encode(std::string_view text) const {
    TokenSeq ids;
    for (const auto& w : split_words(normalize_text(text))) ids.push_back(id(w));
    return ids;
  }

  /// Joins the words of `ids`, skipping special tokens (those spelled <...>).
  std::string decode(const TokenSeq& ids) const {
    std::vector<std::string> out;
    for (TokenId t : ids) {
      const std::string& w = word(t);
      if (w.size() > 1 && w.front() == '<' && w.back() == '>') continue;
      out.push_back(w);
    }
    return join_words(out);
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace socnav
