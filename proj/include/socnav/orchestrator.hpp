// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file orchestrator.hpp
 * @brief Stage drivers, ablation sweeps and the `socnav` command line.
 *
 * Exit codes: 0 ok, 2 usage, 3 validation (bad config, stage order,
 * refusal to overwrite), 4 runtime (I/O, malformed files, anything else).
 * `SOCNAV_LOG` selects stderr verbosity: quiet, info (default) or debug.
 */

#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "socnav/config.hpp"
#include "socnav/error.hpp"
#include "socnav/metrics.hpp"
#include "socnav/moe_policy.hpp"
#include "socnav/navsim.hpp"
#include "socnav/pipeline.hpp"
#include "socnav/rft.hpp"

namespace socnav {

// ---------------------------------------------------------------------------
// Stage drivers shared by the CLI, the sweeps and the acceptance suite
// ---------------------------------------------------------------------------

/// Independent stream per stage so reordering stages never shifts another
/// stage's randomness.
inline Rng stage_rng(const RunConfig& c, Stage s) { return Rng(derive_seed(c.seed, fnv1a64(to_string(s)))); }

inline std::vector<navsim::Record> training_set(const RunConfig& c, const std::vector<navsim::Record>& train) {
  return c.data.augment ? navsim::augment_dataset(train, c.data.seed) : train;
}

inline ModelConfig model_config(const RunConfig& c, const Vocabulary& vocab) {
  ModelConfig m = c.model;
  m.vocab_size = vocab.size();
  return m;
}

inline SupervisedReport sft_stage(PolicyModel& model, const RunConfig& c, const std::vector<navsim::Record>& train, const Vocabulary& vocab,
                                  std::ostream* log = nullptr) {
  Rng rng = stage_rng(c, Stage::sft);
  return run_sft(model, training_set(c, train), vocab, c.plan(Stage::sft), rng, log);
}

inline RftRunReport rft_stage(PolicyModel& model, const RunConfig& c, const std::vector<navsim::Record>& train, const Vocabulary& vocab,
                              std::shared_ptr<const EmbeddingProvider> embedder, std::ostream* log = nullptr,
                              std::ostream* timing = nullptr) {
  Rng rng = stage_rng(c, Stage::rft);
  return run_rft(model, training_set(c, train), vocab, c.rft, RewardSpec{c.reward, std::move(embedder)}, c.turns, rng, log, timing);
}

inline SupervisedReport moeft_stage(PolicyModel& model, const RunConfig& c, const std::vector<navsim::Record>& train, const Vocabulary& vocab,
                                    std::ostream* log = nullptr) {
  Rng rng = stage_rng(c, Stage::moeft);
  return run_moeft(model, training_set(c, train), vocab, c.plan(Stage::moeft), rng, log);
}

/// First line of every CSV artifact.
inline std::string provenance_line(const RunConfig& c) { return "# config_hash=" + c.hash() + " seed=" + std::to_string(c.seed) + "\n"; }

inline std::map<std::string, std::string> checkpoint_metadata(const RunConfig& c, Stage s) {
  return {{"stage", to_string(s)}, {"config_hash", c.hash()}, {"seed", std::to_string(c.seed)}, {"turns", navsim::to_string(c.turns)}};
}

/// Stage recorded in a checkpoint; a missing key reads as a fresh model.
inline Stage checkpoint_stage(const Checkpoint& ck) {
  auto it = ck.metadata.find("stage");
  return it == ck.metadata.end() ? Stage::init : parse_stage(it->second);
}

inline void check_stage_order(Stage next, Stage previous, bool allow_out_of_order) {
  const Stage need = required_predecessor(next);
  if (previous == need || allow_out_of_order) return;
  throw StageOrderError(std::string(to_string(next)) + " must start from a " + to_string(need) + " checkpoint, got " +
                        (previous == Stage::init ? std::string("no prior stage") : std::string("a ") + to_string(previous) + " checkpoint") +
                        " (pass --allow-out-of-order to override)");
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { experts, topk, reward, turns };

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "experts") return SweepAxis::experts;
  if (s == "topk") return SweepAxis::topk;
  if (s == "reward") return SweepAxis::reward;
  if (s == "turns") return SweepAxis::turns;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected experts, topk, reward or turns)");
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::experts: return "experts";
    case SweepAxis::topk: return "topk";
    case SweepAxis::reward: return "reward";
    case SweepAxis::turns: return "turns";
  }
  return "?";
}

struct SweepVariant {
  std::string label;
  RunConfig config;
  bool rft = true;
  bool moeft = true;
  std::string sft_key;  // variants with equal keys share one SFT run
};

/// Expert/top-k pairs of the routing ablation.
inline std::vector<std::pair<std::size_t, std::size_t>> routing_grid() {
  return {{1, 1}, {2, 1}, {2, 2}, {3, 1}, {3, 2}, {3, 3}, {4, 1}, {4, 2}, {4, 3}, {4, 4}};
}

inline std::vector<SweepVariant> sweep_variants(SweepAxis axis, const RunConfig& base) {
  std::vector<SweepVariant> out;
  auto add = [&](std::string label, RunConfig c, bool rft, bool moeft, std::string key) {
    c.validate();
    out.push_back({std::move(label), std::move(c), rft, moeft, std::move(key)});
  };
  switch (axis) {
    case SweepAxis::experts:
      for (auto [k_experts, k] : routing_grid()) {
        RunConfig c = base;
        c.model.moe = true;
        c.model.num_experts = k_experts;
        c.model.top_k = k;
        const std::string label = "K" + std::to_string(k_experts) + "_k" + std::to_string(k);
        add(label, c, true, true, label);
      }
      break;
    case SweepAxis::topk:
      for (std::size_t k = 1; k <= base.model.num_experts; ++k) {
        RunConfig c = base;
        c.model.moe = true;
        c.model.top_k = k;
        const std::string label = "K" + std::to_string(c.model.num_experts) + "_k" + std::to_string(k);
        add(label, c, true, true, label);
      }
      break;
    case SweepAxis::reward:
      for (RewardKind r : {RewardKind::hard, RewardKind::character, RewardKind::ssr}) {
        RunConfig c = base;
        c.reward = r;
        add(to_string(r), c, true, true, "shared");
      }
      break;
    case SweepAxis::turns:
      // MoEFT is multi-turn by construction, so it is left out here to keep
      // the single-turn rows single-turn throughout.
      for (navsim::TurnMode t : {navsim::TurnMode::single, navsim::TurnMode::multi}) {
        for (bool rft : {false, true}) {
          RunConfig c = base;
          c.turns = t;
          add(std::string(navsim::to_string(t)) + (rft ? "_rft" : "_sft"), c, rft, false, navsim::to_string(t));
        }
      }
      break;
  }
  return out;
}

struct SweepRow {
  std::string label;
  ModelConfig model;
  RewardKind reward = RewardKind::ssr;
  navsim::TurnMode turns = navsim::TurnMode::multi;
  bool rft = true;
  bool moeft = true;
  MetricReport report;
};

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads; the first
/// exception is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Full pipeline for every variant of an axis, evaluated on the held-out split.
/// Rows come back in variant order regardless of `workers`.
inline std::vector<SweepRow> run_sweep(SweepAxis axis, const RunConfig& base, std::size_t workers = 1,
                                       const std::function<void(const std::string&)>& progress = {}) {
  base.validate();
  const Vocabulary vocab = navsim::navigation_vocabulary();
  const auto embedder = make_embedder(base);
  const navsim::Dataset data = navsim::build_dataset(base.data.train_n, base.data.test_n, base.data.seed, base.hash());
  const auto variants = sweep_variants(axis, base);

  std::vector<std::string> keys;
  std::map<std::string, std::size_t> first_of_key;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (first_of_key.emplace(variants[i].sft_key, i).second) keys.push_back(variants[i].sft_key);
  }
  std::map<std::string, Weights> sft_weights;
  std::mutex m;
  parallel_for(keys.size(), workers, [&](std::size_t i) {
    const RunConfig& c = variants[first_of_key.at(keys[i])].config;
    PolicyModel model(model_config(c, vocab));
    sft_stage(model, c, data.train, vocab);
    std::lock_guard lock(m);
    sft_weights.emplace(keys[i], model.weights().clone(false));
    if (progress) progress("sft done for " + keys[i]);
  });

  std::vector<SweepRow> rows(variants.size());
  parallel_for(variants.size(), workers, [&](std::size_t i) {
    const SweepVariant& v = variants[i];
    PolicyModel model(sft_weights.at(v.sft_key).clone(true));
    if (v.rft) rft_stage(model, v.config, data.train, vocab, embedder);
    if (v.moeft && model.has_moe()) moeft_stage(model, v.config, data.train, vocab);
    rows[i] = {v.label, model.config(), v.config.reward, v.config.turns, v.rft, v.moeft && model.has_moe(),
               evaluate(model.weights(), data.test, vocab, *embedder, v.config.eval_config())};
    if (progress) progress("variant " + v.label + " done");
  });
  return rows;
}

inline constexpr const char* kSweepColumns = "axis,label,experts,top_k,reward,turns,rft,moeft,parameters,precision,recall,f1,sent_cos,sms,exact";

/// Summary without timing, so equal configs give equal bytes.
inline void write_sweep_summary(std::ostream& out, SweepAxis axis, const RunConfig& base, const std::vector<SweepRow>& rows) {
  out << provenance_line(base) << kSweepColumns << '\n';
  char buf[256];
  for (const auto& r : rows) {
    const MetricReport& m = r.report;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", m.parameter_count, m.mean_precision, m.mean_recall, m.mean_f1,
                  m.mean_sent_cos, m.mean_sms, m.mean_exact);
    out << to_string(axis) << ',' << r.label << ',' << (r.model.moe ? r.model.num_experts : 0) << ',' << (r.model.moe ? r.model.top_k : 0)
        << ',' << (r.rft ? to_string(r.reward) : "none") << ',' << navsim::to_string(r.turns) << ',' << (r.rft ? 1 : 0) << ','
        << (r.moeft ? 1 : 0) << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

namespace cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kValidation = 3, kRuntime = 4 };

enum class LogLevel { quiet, info, debug };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("SOCNAV_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::quiet;
  if (s == "debug" || s == "2") return LogLevel::debug;
  return LogLevel::info;
}

class Logger {
 public:
  Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void info(const std::string& msg) { emit(LogLevel::info, msg); }
  void debug(const std::string& msg) { emit(LogLevel::debug, msg); }

 private:
  void emit(LogLevel at, const std::string& msg) {
    if (level_ < at) return;
    std::lock_guard lock(m_);
    err_ << "[socnav] " << msg << '\n';
  }
  std::ostream& err_;
  LogLevel level_;
  std::mutex m_;
};

namespace fs = std::filesystem;

inline RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::from_file(path); }

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

/// `path` is a dataset directory (reads `<path>/<split>.jsonl`) or a file.
inline std::vector<navsim::Record> load_split(const std::string& path, const std::string& split) {
  if (fs::is_directory(path)) return navsim::read_records((fs::path(path) / (split + ".jsonl")).string());
  return navsim::read_records(path);
}

inline void check_disjoint(const std::vector<navsim::Record>& train, const std::vector<navsim::Record>& test) {
  std::set<std::uint64_t> seeds;
  for (const auto& r : train) seeds.insert(r.seed);
  for (const auto& r : test) {
    if (seeds.count(r.seed)) throw FormatError("test record '" + r.id + "' shares its scene seed with the training split");
  }
}

struct StageArgs {
  std::string config, data, in_ckpt, out_ckpt;
  bool allow_out_of_order = false;
};

inline std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline int run_stage(Stage stage, const StageArgs& a, std::ostream& out, Logger& log) {
  const RunConfig cfg = load_config(a.config);
  const Vocabulary vocab = navsim::navigation_vocabulary();
  std::optional<Checkpoint> in;
  if (!a.in_ckpt.empty()) in = load_checkpoint(a.in_ckpt);
  check_stage_order(stage, in ? checkpoint_stage(*in) : Stage::init, a.allow_out_of_order);
  const auto train = load_split(a.data, "train");
  log.info(std::string(to_string(stage)) + ": config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed) + ", " +
           std::to_string(train.size()) + " training records");

  PolicyModel model = in ? PolicyModel(in->weights.clone(true)) : PolicyModel(model_config(cfg, vocab));
  if (in && !(in->weights.config == model_config(cfg, vocab))) log.info("model shape taken from the input checkpoint, not the config");

  std::ofstream log_csv = open_output(a.out_ckpt + ".log.csv");
  log_csv << provenance_line(cfg);
  std::string summary;
  switch (stage) {
    case Stage::sft: {
      const auto r = sft_stage(model, cfg, train, vocab, &log_csv);
      summary = "final loss " + fmt(r.epochs.back().mean_loss);
      break;
    }
    case Stage::rft: {
      std::ofstream timing = open_output(a.out_ckpt + ".timing.csv");
      timing << provenance_line(cfg);
      const auto r = rft_stage(model, cfg, train, vocab, make_embedder(cfg), &log_csv, &timing);
      summary = "final J " + fmt(r.steps.back().objective) + ", mean reward " + fmt(r.steps.back().mean_reward);
      break;
    }
    case Stage::moeft: {
      const auto r = moeft_stage(model, cfg, train, vocab, &log_csv);
      summary = "final loss " + fmt(r.epochs.back().mean_loss);
      break;
    }
    case Stage::init: throw ContractError("init is not a runnable stage");
  }
  save_checkpoint(a.out_ckpt, model.weights(), checkpoint_metadata(cfg, stage));
  out << to_string(stage) << " done: " << summary << "\ncheckpoint " << a.out_ckpt << "\nconfig_hash " << cfg.hash() << '\n';
  return kOk;
}

inline int run_gen_data(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed,
                        std::optional<std::size_t> train_n, std::optional<std::size_t> test_n, bool force, std::ostream& out) {
  RunConfig cfg = load_config(config);
  if (seed) cfg.data.seed = *seed;
  if (train_n) cfg.data.train_n = *train_n;
  if (test_n) cfg.data.test_n = *test_n;
  cfg.validate();
  const fs::path dir(out_dir);
  const fs::path train_path = dir / "train.jsonl", test_path = dir / "test.jsonl";
  if (!force && (fs::exists(train_path) || fs::exists(test_path))) {
    throw ConfigError("dataset already exists in '" + out_dir + "' (pass --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());
  const navsim::Dataset d = navsim::build_dataset(cfg.data.train_n, cfg.data.test_n, cfg.data.seed, cfg.hash());
  navsim::write_records(train_path.string(), d.train, d.config_hash);
  navsim::write_records(test_path.string(), d.test, d.config_hash);
  open_output((dir / "config.ini").string()) << "# config_hash=" << cfg.hash() << '\n' << cfg.to_text();
  out << "wrote " << d.train.size() << " train and " << d.test.size() << " test records to " << out_dir << "\nconfig_hash " << cfg.hash()
      << '\n';
  return kOk;
}

inline int run_eval(const std::string& config, const std::string& ckpt, const std::string& data, const std::string& out_path,
                    std::ostream& out) {
  const RunConfig cfg = load_config(config);
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto test = load_split(data, "test");
  if (fs::is_directory(data) && fs::exists(fs::path(data) / "train.jsonl")) check_disjoint(load_split(data, "train"), test);
  const MetricReport r = evaluate(ck.weights, test, navsim::navigation_vocabulary(), *make_embedder(cfg), cfg.eval_config());
  std::ofstream csv = open_output(out_path);
  csv << "# config_hash=" << cfg.hash() << " seed=" << cfg.seed;
  if (auto it = ck.metadata.find("config_hash"); it != ck.metadata.end()) csv << " checkpoint_config_hash=" << it->second;
  csv << '\n';
  write_metric_csv(csv, r);
  write_metric_table(out, r);
  return kOk;
}

inline int run_bench(const std::string& config, const std::string& ckpt, const std::string& data, std::ostream& out) {
  const RunConfig cfg = load_config(config);
  const Vocabulary vocab = navsim::navigation_vocabulary();
  const Weights w = ckpt.empty() ? Weights::initialize(model_config(cfg, vocab), false) : load_checkpoint(ckpt).weights;
  const auto test = data.empty() ? navsim::build_dataset(cfg.data.train_n, cfg.data.test_n, cfg.data.seed).test : load_split(data, "test");
  const MetricReport r = evaluate(w, test, vocab, *make_embedder(cfg), cfg.eval_config());
  out << "parameters      " << w.parameter_count() << '\n'
      << "actions         " << r.actions << '\n'
      << "action seconds  " << fmt(r.action_seconds, "%.4f") << '\n'
      << "actions/second  " << fmt(r.fps(), "%.2f") << '\n';
  return kOk;
}

inline int run_sweep_cmd(const std::string& axis_name, const std::string& config, const std::string& out_dir, std::size_t workers,
                         std::ostream& out, Logger& log) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const RunConfig cfg = load_config(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());
  const auto rows = run_sweep(axis, cfg, workers, [&](const std::string& m) { log.info("sweep: " + m); });
  {
    std::ofstream summary = open_output((fs::path(out_dir) / "summary.csv").string());
    write_sweep_summary(summary, axis, cfg, rows);
  }
  std::ofstream timing = open_output((fs::path(out_dir) / "timing.csv").string());
  timing << provenance_line(cfg) << "label,actions,action_seconds,fps\n";
  for (const auto& r : rows) {
    timing << r.label << ',' << r.report.actions << ',' << fmt(r.report.action_seconds, "%.6f") << ',' << fmt(r.report.fps(), "%.4f") << '\n';
    out << r.label << "  f1 " << fmt(r.report.mean_f1, "%.4f") << "  sms " << fmt(r.report.mean_sms, "%.4f") << "  exact "
        << fmt(r.report.mean_exact, "%.4f") << '\n';
  }
  out << "summary " << (fs::path(out_dir) / "summary.csv").string() << '\n';
  return kOk;
}

/// Entry point of the `socnav` binary.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Socially compliant navigation with a mixture-of-experts policy"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "socnav 0.1.0");

  std::string config, data, out_path, ckpt, axis, out_dir;
  std::uint64_t seed = 0;
  std::size_t train_n = 0, test_n = 0, workers = 1;
  bool force = false;
  StageArgs stage_args;

  auto* gen = app.add_subcommand("gen-data", "Generate train/test scene datasets");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--config", config, "Run config (INI)");
  auto* seed_opt = gen->add_option("--seed", seed, "Dataset seed (overrides data.seed)");
  auto* train_opt = gen->add_option("--train-n", train_n, "Training scenes")->check(CLI::PositiveNumber);
  auto* test_opt = gen->add_option("--test-n", test_n, "Held-out scenes")->check(CLI::PositiveNumber);
  gen->add_flag("--force", force, "Overwrite an existing dataset");

  std::map<std::string, Stage> stage_of;
  for (Stage s : {Stage::sft, Stage::rft, Stage::moeft}) {
    static const std::map<Stage, std::string> help{{Stage::sft, "Supervised fine-tuning"},
                                                   {Stage::rft, "Reinforcement fine-tuning (GSPO/GRPO)"},
                                                   {Stage::moeft, "Multi-turn MoE fine-tuning"}};
    auto* sub = app.add_subcommand(to_string(s), help.at(s));
    sub->add_option("--config", stage_args.config, "Run config (INI)");
    sub->add_option("--data", stage_args.data, "Dataset directory or training JSONL file")->required();
    sub->add_option("--in-ckpt", stage_args.in_ckpt, "Checkpoint from the previous stage");
    sub->add_option("--out-ckpt", stage_args.out_ckpt, "Output checkpoint; logs go next to it")->required();
    sub->add_flag("--allow-out-of-order", stage_args.allow_out_of_order, "Skip the stage-order check");
    stage_of[to_string(s)] = s;
  }

  auto* ev = app.add_subcommand("eval", "Score generated actions on the held-out split");
  ev->add_option("--config", config, "Run config (INI)");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset directory or test JSONL file")->required();
  ev->add_option("--out", out_path, "Per-example metric CSV")->required();

  auto* bench = app.add_subcommand("bench", "Parameter count and action-generation throughput");
  bench->add_option("--config", config, "Run config (INI)");
  bench->add_option("--ckpt", ckpt, "Checkpoint (default: freshly initialized model)");
  bench->add_option("--data", data, "Dataset directory or test JSONL file (default: generated)");

  auto* sweep = app.add_subcommand("sweep", "Ablation sweep over one axis");
  sweep->add_option("--axis", axis, "experts, topk, reward or turns")->required()->check(CLI::IsMember({"experts", "topk", "reward", "turns"}));
  sweep->add_option("--config", config, "Run config (INI)");
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--parallel", workers, "Configurations run concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Logger log(err, log_level_from_env());
  try {
    if (*gen) {
      return run_gen_data(config, out_dir, *seed_opt ? std::optional(seed) : std::nullopt, *train_opt ? std::optional(train_n) : std::nullopt,
                          *test_opt ? std::optional(test_n) : std::nullopt, force, out);
    }
    for (auto* sub : app.get_subcommands()) {
      if (auto it = stage_of.find(sub->get_name()); it != stage_of.end()) return run_stage(it->second, stage_args, out, log);
    }
    if (*ev) return run_eval(config, ckpt, data, out_path, out);
    if (*bench) return run_bench(config, ckpt, data, out);
    if (*sweep) return run_sweep_cmd(axis, config, out_dir, workers, out, log);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const StageOrderError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace cli
}  // namespace socnav
