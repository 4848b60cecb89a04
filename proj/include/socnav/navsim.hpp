// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file navsim.hpp
 * @brief Synthetic social-navigation scenes, their textual descriptions,
 *        multi-turn conversations and the rule-based expert action.
 *
 * Coordinates are robot-relative cells: the robot sits at (0, 0) facing +y.
 * Lateral offsets run from -4 (left) to +4 (right), depth from 1 to 8. The
 * forward corridor is the 3-cell strip |x| <= 1, 1 <= y <= 5.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "socnav/error.hpp"
#include "socnav/rng.hpp"
#include "socnav/vocab.hpp"

namespace socnav::navsim {

inline constexpr int kHalfWidth = 4;
inline constexpr int kDepth = 8;
inline constexpr int kCorridorHalfWidth = 1;
inline constexpr int kHorizon = 5;
inline constexpr int kDatasetFormatVersion = 1;

enum class Difficulty { clear, crowd, crossing };
enum class Side { none, left, right };

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::clear: return "clear";
    case Difficulty::crowd: return "crowd";
    case Difficulty::crossing: return "crossing";
  }
  return "?";
}

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "clear") return Difficulty::clear;
  if (s == "crowd") return Difficulty::crowd;
  if (s == "crossing") return Difficulty::crossing;
  throw FormatError("unknown difficulty '" + s + "'");
}

inline const char* to_string(Side s) {
  switch (s) {
    case Side::none: return "none";
    case Side::left: return "left";
    case Side::right: return "right";
  }
  return "?";
}

inline Side opposite(Side s) {
  return s == Side::left ? Side::right : s == Side::right ? Side::left : Side::none;
}

struct Pedestrian {
  int x = 0;
  int y = 0;
  int vx = 0;
  int vy = 0;
  bool moving = false;
  bool in_crowd = false;
  bool operator==(const Pedestrian&) const = default;
};

struct Scene {
  int half_width = kHalfWidth;
  int depth = kDepth;
  int robot_x = 0;
  int robot_y = 0;
  int heading_deg = 0;  // 0 = facing +y
  int goal_dx = 0;
  int goal_dy = 1;
  std::vector<Pedestrian> pedestrians;
  Side free_side = Side::none;
  std::uint64_t render_seed = 0;  // fixes clause order in the description
  bool operator==(const Scene&) const = default;
};

inline bool in_corridor(int x, int y) {
  return std::abs(x) <= kCorridorHalfWidth && y >= 1 && y <= kHorizon;
}

inline std::size_t corridor_occupancy(const Scene& s) {
  return static_cast<std::size_t>(
      std::count_if(s.pedestrians.begin(), s.pedestrians.end(), [](const Pedestrian& p) { return in_corridor(p.x, p.y); }));
}

/// True when the pedestrian's straight-line extrapolation enters the corridor
/// within the horizon.
inline bool crosses_corridor(const Pedestrian& p) {
  if (!p.moving) return false;
  for (int t = 0; t <= kHorizon; ++t) {
    if (in_corridor(p.x + p.vx * t, p.y + p.vy * t)) return true;
  }
  return false;
}

inline bool has_crossing(const Scene& s) {
  return std::any_of(s.pedestrians.begin(), s.pedestrians.end(), crosses_corridor);
}

/// Stationary crowd members standing in the corridor.
inline std::vector<Pedestrian> blocking_crowd(const Scene& s) {
  std::vector<Pedestrian> out;
  for (const auto& p : s.pedestrians) {
    if (p.in_crowd && !p.moving && in_corridor(p.x, p.y)) out.push_back(p);
  }
  return out;
}

inline bool has_blocking_crowd(const Scene& s) { return blocking_crowd(s).size() >= 2; }

/// Corridor lane left free by the crowd, derived from geometry alone.
inline Side crowd_free_side(const Scene& s) {
  bool left_blocked = false, right_blocked = false;
  for (const auto& p : blocking_crowd(s)) {
    if (p.x < 0) left_blocked = true;
    if (p.x > 0) right_blocked = true;
  }
  if (left_blocked == right_blocked) return Side::none;
  return left_blocked ? Side::right : Side::left;
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

enum class Motion { continue_straight, slight_left, slight_right, stop };
enum class Speed { none, slow, moderate };

struct ActionSentence {
  Motion motion = Motion::stop;
  Speed speed = Speed::none;
  bool operator==(const ActionSentence&) const = default;

  std::string text() const {
    std::string m;
    switch (motion) {
      case Motion::continue_straight: m = "continue straight"; break;
      case Motion::slight_left: m = "slight left turn"; break;
      case Motion::slight_right: m = "slight right turn"; break;
      case Motion::stop: return "stop";
    }
    return m + (speed == Speed::slow ? " at slow speed" : " at moderate speed");
  }
};

/// Expert rule with priority crossing > crowd > clear.
inline ActionSentence ground_truth_action(const Scene& s) {
  if (has_crossing(s)) return {Motion::stop, Speed::none};
  if (has_blocking_crowd(s)) {
    switch (crowd_free_side(s)) {
      case Side::left: return {Motion::slight_left, Speed::slow};
      case Side::right: return {Motion::slight_right, Speed::slow};
      case Side::none: return {Motion::stop, Speed::none};
    }
  }
  return {Motion::continue_straight, Speed::moderate};
}

inline const std::vector<std::string>& action_texts() {
  static const std::vector<std::string> texts{
      "continue straight at moderate speed", "slight left turn at slow speed", "slight right turn at slow speed", "stop"};
  return texts;
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

namespace detail {

struct Placement {
  Scene& scene;
  std::set<std::pair<int, int>> occupied;

  bool place(const Pedestrian& p) {
    if (std::abs(p.x) > kHalfWidth || p.y < 1 || p.y > kDepth) return false;
    if (!occupied.emplace(p.x, p.y).second) return false;
    scene.pedestrians.push_back(p);
    return true;
  }
};

/// Bystanders in the outer lanes: standing, walking parallel to the robot or
/// walking outward, away from the corridor. None of them ever enters it.
inline bool add_bystanders(Placement& pl, Rng& rng, std::uint64_t max_count) {
  const auto n = rng.below(max_count + 1);
  for (std::uint64_t i = 0; i < n; ++i) {
    Pedestrian p;
    const int sign = rng.bernoulli(0.5) ? -1 : 1;
    p.x = sign * (2 + static_cast<int>(rng.below(3)));
    p.y = 1 + static_cast<int>(rng.below(kDepth));
    switch (rng.below(4)) {
      case 0: break;
      case 1: p.vy = 1; break;
      case 2: p.vy = -1; break;
      default: p.vx = sign; break;
    }
    p.moving = p.vx != 0 || p.vy != 0;
    if (!pl.place(p)) return false;
  }
  return true;
}

inline bool add_crowd(Placement& pl, Rng& rng) {
  const Side crowd_side = rng.bernoulli(0.5) ? Side::left : Side::right;
  const int a = crowd_side == Side::left ? -1 : 0;
  const int y0 = 2 + static_cast<int>(rng.below(3));
  const std::size_t size = 2 + rng.below(3);
  const std::array<std::pair<int, int>, 4> cells{{{a, y0}, {a + 1, y0}, {a, y0 + 1}, {a + 1, y0 + 1}}};
  for (std::size_t i = 0; i < size; ++i) {
    Pedestrian p;
    p.x = cells[i].first;
    p.y = cells[i].second;
    p.in_crowd = true;
    if (!pl.place(p)) return false;
  }
  pl.scene.free_side = opposite(crowd_side);
  return true;
}

inline bool add_crosser(Placement& pl, Rng& rng) {
  const int sign = rng.bernoulli(0.5) ? -1 : 1;
  Pedestrian p;
  p.x = sign * (2 + static_cast<int>(rng.below(3)));
  p.y = 1 + static_cast<int>(rng.below(kHorizon));
  p.vx = -sign;
  p.moving = true;
  return pl.place(p);
}

}  // namespace detail

/// clear: empty corridor; crowd: stationary group blocking the corridor with
/// exactly one free side; crossing: a walker whose path enters the corridor
/// within the horizon (sometimes alongside a crowd).
inline Scene generate_scene(Rng& rng, Difficulty difficulty) {
  for (;;) {
    Scene scene;
    detail::Placement pl{scene, {}};
    bool ok = true;
    switch (difficulty) {
      case Difficulty::clear:
        ok = detail::add_bystanders(pl, rng, 2);
        break;
      case Difficulty::crowd:
        ok = detail::add_crowd(pl, rng) && detail::add_bystanders(pl, rng, 1);
        break;
      case Difficulty::crossing:
        ok = detail::add_crosser(pl, rng);
        if (ok && rng.bernoulli(0.5)) ok = detail::add_crowd(pl, rng);
        ok = ok && detail::add_bystanders(pl, rng, 1);
        break;
    }
    scene.render_seed = rng.next_u64();
    if (ok) return scene;
  }
}

// ---------------------------------------------------------------------------
// Text rendering
// ---------------------------------------------------------------------------

struct Style {
  std::string lighting;
  std::string weather;
  std::string text() const { return lighting + " " + weather; }
};

inline const std::vector<Style>& styles() {
  static const std::vector<Style> all = [] {
    std::vector<Style> s;
    for (const char* l : {"bright", "dim", "dark"})
      for (const char* w : {"sunny", "rainy", "foggy", "snowy"}) s.push_back({l, w});
    return s;
  }();
  return all;
}

namespace detail {

inline const char* number_word(std::size_t n) {
  static const std::array<const char*, 5> words{"zero", "one", "two", "three", "four"};
  return n < words.size() ? words[n] : "many";
}

inline const char* side_word(int x) { return x < 0 ? "left" : "right"; }

}  // namespace detail

inline const char* motion_word(const Pedestrian& p) {
  if (!p.moving) return "standing";
  if (p.vx < 0) return "walking left";
  if (p.vx > 0) return "walking right";
  return p.vy > 0 ? "walking forward" : "walking back";
}

/// What the robot observes: corridor status, the crowd and every other
/// pedestrian with its side and motion, joined with " . ". Clause order
/// follows the scene's render seed and does not depend on the style.
inline std::string describe_geometry(const Scene& s) {
  std::vector<std::string> clauses;
  clauses.emplace_back(std::string("the path ahead is ") + (corridor_occupancy(s) == 0 ? "clear" : "blocked"));
  const auto crowd = blocking_crowd(s);
  if (crowd.size() >= 2) {
    const int nearest = std::min_element(crowd.begin(), crowd.end(), [](auto& a, auto& b) { return a.y < b.y; })->y;
    clauses.emplace_back(std::string("a stationary crowd of ") + detail::number_word(crowd.size()) + " people stands " +
                         (nearest <= 3 ? "near" : "far") + " ahead on the " + to_string(opposite(crowd_free_side(s))));
  }
  for (const auto& p : s.pedestrians) {
    if (p.in_crowd && in_corridor(p.x, p.y)) continue;
    clauses.emplace_back(std::string("a pedestrian ") + (p.y <= 3 ? "near" : "far") + " on the " + detail::side_word(p.x) + " is " +
                         motion_word(p));
  }
  Rng order(s.render_seed);
  for (std::size_t i = clauses.size(); i > 1; --i) std::swap(clauses[i - 1], clauses[order.below(i)]);
  std::string out;
  for (const auto& c : clauses) out += (out.empty() ? "" : " . ") + c;
  return out;
}

/// The interpreted scene: corridor status, the open side when a crowd
/// blocks the corridor and any pedestrian about to cross.
inline std::string summarize_scene(const Scene& s) {
  std::string out = std::string("the path ahead is ") + (corridor_occupancy(s) == 0 ? "clear" : "blocked");
  if (has_blocking_crowd(s)) out += std::string(" . the ") + to_string(crowd_free_side(s)) + " side is open";
  for (const auto& p : s.pedestrians) {
    if (crosses_corridor(p)) out += std::string(" . a pedestrian is crossing from the ") + detail::side_word(p.x);
  }
  return out;
}

/// Style adjectives followed by the geometry clauses.
inline std::string describe_scene(const Scene& s, const Style& style) {
  return style.text() + " scene . " + describe_geometry(s);
}

/// Flags recovered from a description by reading the templates back.
struct ParsedDescription {
  std::string lighting;
  std::string weather;
  bool path_blocked = false;
  Side crowd_side = Side::none;
  std::size_t crowd_size = 0;
  std::size_t pedestrians = 0;  // observed outside the crowd
  std::size_t walking_inward = 0;  // lateral walkers heading toward the corridor
  bool crossing = false;        // summary clause
  Side open_side = Side::none;  // summary clause
};

inline ParsedDescription parse_description(const std::string& text) {
  ParsedDescription out;
  std::vector<std::vector<std::string>> clauses(1);
  for (auto& w : split_words(text)) {
    if (w == ".") {
      clauses.emplace_back();
    } else {
      clauses.back().push_back(std::move(w));
    }
  }
  auto side_of = [](const std::string& w) { return w == "left" ? Side::left : w == "right" ? Side::right : Side::none; };
  for (const auto& c : clauses) {
    if (c.size() == 3 && c[2] == "scene") {
      out.lighting = c[0];
      out.weather = c[1];
    } else if (c.size() == 5 && c[1] == "path") {
      out.path_blocked = c[4] == "blocked";
    } else if (c.size() >= 3 && c[1] == "stationary") {
      for (std::size_t n = 0; n <= 4; ++n)
        if (c[4] == detail::number_word(n)) out.crowd_size = n;
      out.crowd_side = side_of(c.back());
    } else if (c.size() == 5 && c.back() == "open") {
      out.open_side = side_of(c[1]);
    } else if (c.size() >= 4 && c[3] == "crossing") {
      out.crossing = true;
    } else if (c.size() >= 6 && c[0] == "a" && c[1] == "pedestrian" && c[3] == "on") {
      ++out.pedestrians;
      const Side side = side_of(c[5]);
      if (c.size() == 9 && c[7] == "walking" && side_of(c[8]) == opposite(side)) ++out.walking_inward;
    } else if (!c.empty()) {
      throw FormatError("unrecognized description clause: " + join_words(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conversations
// ---------------------------------------------------------------------------

enum class Role { prompt, response };

struct Turn {
  Role role = Role::prompt;
  std::string text;
  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::vector<Turn> turns;
  bool operator==(const Conversation&) const = default;

  /// Alternating roles, starting with a prompt and ending with a response.
  bool well_formed() const {
    if (turns.empty() || turns.size() % 2 != 0) return false;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      if (turns[i].role != (i % 2 == 0 ? Role::prompt : Role::response)) return false;
    }
    return true;
  }
};

inline constexpr const char* kSummaryRequest = "summarize the scene";
inline constexpr const char* kActionRequest = "what is the next action";

/// Turn 1 asks for a scene summary, turn 2 for the next action.
inline Conversation make_conversation(const Scene& s, const Style& style) {
  Conversation c;
  c.turns.push_back({Role::prompt, describe_scene(s, style) + " . " + kSummaryRequest});
  c.turns.push_back({Role::response, summarize_scene(s)});
  c.turns.push_back({Role::prompt, kActionRequest});
  c.turns.push_back({Role::response, ground_truth_action(s).text()});
  return c;
}

struct Record {
  std::string id;
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::clear;
  std::size_t style = 0;
  Scene scene;
  Conversation conversation;
  std::string action;
  bool operator==(const Record&) const = default;
};

inline Record make_record(std::string id, std::uint64_t seed, Difficulty difficulty) {
  Rng rng(seed);
  Record r;
  r.id = std::move(id);
  r.seed = seed;
  r.difficulty = difficulty;
  r.scene = generate_scene(rng, difficulty);
  r.style = rng.below(styles().size());
  r.conversation = make_conversation(r.scene, styles()[r.style]);
  r.action = ground_truth_action(r.scene).text();
  return r;
}

/// Re-renders the record under a different lighting/weather style. Geometry
/// and the expert action are untouched.
inline Record augment(const Record& r, Rng& rng) {
  Record out = r;
  const std::size_t shift = 1 + rng.below(styles().size() - 1);
  out.style = (r.style + shift) % styles().size();
  out.id = r.id + "-aug";
  out.conversation = make_conversation(r.scene, styles()[out.style]);
  return out;
}

/// Each record followed by one augmented copy.
inline std::vector<Record> augment_dataset(const std::vector<Record>& records, std::uint64_t seed) {
  Rng rng(derive_seed(seed, fnv1a64("augment")));
  std::vector<Record> out;
  out.reserve(records.size() * 2);
  for (const auto& r : records) {
    out.push_back(r);
    out.push_back(augment(r, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<Record> train;
  std::vector<Record> test;
  std::string config_hash;
};

/// Disjoint scene seeds for the two splits, difficulties cycling so the
/// histogram is balanced to within one.
inline Dataset build_dataset(std::size_t n_train, std::size_t n_test, std::uint64_t seed, std::string config_hash = "") {
  if (n_train == 0 || n_test == 0) throw ContractError("build_dataset: split sizes must be positive");
  Dataset d;
  d.config_hash = std::move(config_hash);
  std::set<std::uint64_t> used;
  auto fill = [&](std::vector<Record>& out, std::size_t n, const char* split) {
    Rng rng(derive_seed(seed, fnv1a64(split)));
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t s = rng.next_u64();
      while (!used.insert(s).second) s = rng.next_u64();
      char id[32];
      std::snprintf(id, sizeof id, "%s-%04zu", split, i);
      out.push_back(make_record(id, s, static_cast<Difficulty>(i % 3)));
    }
  };
  fill(d.train, n_train, "train");
  fill(d.test, n_test, "test");
  return d;
}

inline nlohmann::json to_json(const Record& r, const std::string& config_hash) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : r.conversation.turns) {
    turns.push_back({{"role", t.role == Role::prompt ? "prompt" : "response"}, {"text", t.text}});
  }
  return nlohmann::json{{"version", kDatasetFormatVersion},
                        {"id", r.id},
                        {"seed", r.seed},
                        {"difficulty", to_string(r.difficulty)},
                        {"style", styles()[r.style].text()},
                        {"turns", std::move(turns)},
                        {"action", r.action},
                        {"config_hash", config_hash}};
}

inline Record record_from_json(const nlohmann::json& j) {
  const auto where = [&]() { return j.contains("id") && j["id"].is_string() ? " (record " + j["id"].get<std::string>() + ")" : std::string(); };
  try {
    if (j.at("version").get<int>() != kDatasetFormatVersion) {
      throw FormatError("unsupported dataset version " + j.at("version").dump() + where());
    }
    Record r;
    r.id = j.at("id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
    Rng rng(r.seed);
    r.scene = generate_scene(rng, r.difficulty);
    const auto style = j.at("style").get<std::string>();
    const auto& all = styles();
    auto it = std::find_if(all.begin(), all.end(), [&](const Style& s) { return s.text() == style; });
    if (it == all.end()) throw FormatError("unknown style '" + style + "'" + where());
    r.style = static_cast<std::size_t>(it - all.begin());
    for (const auto& t : j.at("turns")) {
      const auto role = t.at("role").get<std::string>();
      if (role != "prompt" && role != "response") throw FormatError("unknown role '" + role + "'" + where());
      r.conversation.turns.push_back({role == "prompt" ? Role::prompt : Role::response, t.at("text").get<std::string>()});
    }
    if (!r.conversation.well_formed()) throw FormatError("conversation turns are not alternating" + where());
    r.action = j.at("action").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset record") + where() + ": " + e.what());
  }
}

inline void write_records(const std::string& path, const std::vector<Record>& records, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : records) out << to_json(r, config_hash).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<Record> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::vector<Record> records;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(record_from_json(j));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Tokenized dialogue
// ---------------------------------------------------------------------------

inline constexpr const char* kPromptMarker = "<prompt>";
inline constexpr const char* kResponseMarker = "<response>";

/// Every word the templates can emit, specials first.
inline Vocabulary navigation_vocabulary() {
  std::vector<std::string> words{"<eos>", "<pad>", kPromptMarker, kResponseMarker, "."};
  auto add = [&](const std::string& text) {
    for (auto& w : split_words(text))
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  };
  for (const auto& s : styles()) add(s.text());
  add("scene the path ahead is clear blocked a stationary crowd of two three four people stands near far on left right");
  add("side open pedestrian crossing from walking standing forward back");
  add(kSummaryRequest);
  add(kActionRequest);
  for (const auto& a : action_texts()) add(a);
  return Vocabulary(std::move(words));
}

enum class TurnMode { single, multi };

inline const char* to_string(TurnMode m) { return m == TurnMode::single ? "single" : "multi"; }

/// Single-turn keeps every prompt but only the final response.
inline Conversation to_turn_mode(const Conversation& c, TurnMode mode) {
  if (mode == TurnMode::multi) return c;
  Conversation out;
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    if (c.turns[i].role == Role::prompt || i + 1 == c.turns.size()) out.turns.push_back(c.turns[i]);
  }
  return out;
}

/// Token sequence plus, per position, whether that token is a supervised
/// response token.
struct EncodedConversation {
  TokenSeq tokens;
  std::vector<bool> target_mask;
  std::size_t response_tokens() const { return static_cast<std::size_t>(std::count(target_mask.begin(), target_mask.end(), true)); }
};

/// <prompt> words ... <response> words ... <eos> for each turn; response
/// words and their <eos> are supervised.
inline EncodedConversation encode_conversation(const Vocabulary& vocab, const Conversation& c) {
  EncodedConversation e;
  auto push = [&](TokenId t, bool target) {
    e.tokens.push_back(t);
    e.target_mask.push_back(target);
  };
  for (const auto& turn : c.turns) {
    if (turn.role == Role::prompt) {
      push(vocab.id(kPromptMarker), false);
      for (TokenId t : vocab.encode(turn.text)) push(t, false);
    } else {
      push(vocab.id(kResponseMarker), false);
      for (TokenId t : vocab.encode(turn.text)) push(t, true);
      push(Vocabulary::kEos, true);
    }
  }
  return e;
}

/// Context up to and including the final <response> marker; the model
/// continues from there with the action.
inline TokenSeq action_prompt(const Vocabulary& vocab, const Conversation& c) {
  Conversation head = c;
  head.turns.pop_back();
  TokenSeq tokens = encode_conversation(vocab, head).tokens;
  tokens.push_back(vocab.id(kResponseMarker));
  return tokens;
}

}  // namespace socnav::navsim
