#pragma once

/**
 * Subcommands of the ctxlens tool.
 *
 * Each cmd_* takes a RunConfig plus its own options, writes artifacts under
 * RunConfig::out and returns an exit code. Library errors escape as
 * ctxlens::Error; run_guarded() maps them to exit codes and stderr text.
 *
 * Per-sequence work runs on a bounded pool but records are written in input
 * order and flushed one by one, so outputs are byte-identical across runs
 * with the same seed and an interrupted run leaves only whole records.
 */

#include "ctxlens/backend_factory.hpp"
#include "ctxlens/boosting.hpp"
#include "ctxlens/calibration.hpp"
#include "ctxlens/context_probe.hpp"
#include "ctxlens/corpus.hpp"
#include "ctxlens/detection.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/parallel.hpp"
#include "ctxlens/reporting.hpp"
#include "ctxlens/serialize.hpp"
#include "ctxlens/synthetic.hpp"
#include "ctxlens/textmetrics.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ctxlens::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kBackendEnv = "CTXLENS_BACKEND_URL";

struct RunConfig {
  /// Backend spec; empty means CTXLENS_BACKEND_URL.
  std::string backend;
  std::string strategy = "nucleus:0.9";
  std::string grid = "short";
  std::uint64_t seed = 0;
  /// Worker count; 0 uses the backend's max_parallel.
  std::size_t parallel = 0;
  fs::path out = "out";
  std::size_t cache_capacity = 4096;

  double delta = kDefaultDelta;
  std::vector<double> epsilons{0.1, 0.2};
  double tau = kDefaultTau;
  double gamma = kDefaultGamma;
  std::optional<double> lambda;
  double alpha = 0.5;
  /// LSPS threshold for boosting.
  double boost_epsilon = 0.05;
  std::size_t short_len = 32;
  std::optional<double> short_frac;
  bool masking = false;

  DecodingStrategy decoding() const { return DecodingStrategy::parse(strategy); }
  PrefixGrid prefix_grid() const { return PrefixGrid::parse(grid); }
  ShortPrefix short_prefix() const {
    return short_frac ? ShortPrefix::relative(*short_frac) : ShortPrefix::fixed(short_len);
  }
  Truncation truncation() const { return masking ? Truncation::masking : Truncation::suffix; }

  void validate() const {
    decoding();
    prefix_grid().validate();
    short_prefix().validate();
    if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
    for (double e : epsilons)
      if (!(e > 0.0)) throw ConfigError("epsilon must be > 0");
    const double hi = max_jsd();
    if (!(tau >= 0.0 && tau <= hi)) throw ConfigError("tau must lie in [0, sqrt(ln 2)]");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0 (inf disables boosting)");
    if (lambda && !(*lambda >= 1.0 && std::isfinite(*lambda))) throw ConfigError("lambda must be a finite value >= 1");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(boost_epsilon > 0.0)) throw ConfigError("boost epsilon must be > 0");
    if (cache_capacity < 1) throw ConfigError("cache capacity must be >= 1");
  }
};

/// Where sequences come from: a samples file, or a corpus to cut into buckets.
struct SequenceInput {
  fs::path samples;
  fs::path corpus;
  std::size_t n_per_bucket = 100;
  /// Added to every bucket bound (6000 for the long-document window).
  std::size_t offset = 0;
  fs::path token_cache;
};

struct MclOptions {
  SequenceInput input;
  /// Keep only sequences the model gets right, confidently, at full context.
  bool filter = true;
};

struct DamclOptions {
  SequenceInput input;
  /// Empty: use RunConfig::strategy.
  std::vector<std::string> strategies;
  std::string metric = "jsd";
};

struct DetectOptions {
  SequenceInput input;
  std::string oracle = "mcl";
  std::vector<double> tau_sweep;
};

struct GenerateOptions {
  fs::path prompts;
  fs::path gold;
  std::size_t n_samples = 5;
  std::size_t max_new = 32;
  std::string method = "vanilla";
};

struct BenchOptions {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t repeats = 5;
};

struct ScoreOptions {
  fs::path input;
};

struct SynthOptions {
  std::string kind = "kv";
  /// distance:count pairs.
  std::vector<std::pair<std::size_t, std::size_t>> mix;
  std::size_t length = 256;
  std::size_t lines = 50;
  std::size_t window = 32;
  std::size_t vocab = 1000;
  std::string answer = "content";
  fs::path filler;
};

// ---------------------------------------------------------------- helpers

/// Compact, locale-independent number text for CSV cells and file names.
inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// "10:80,100:20" -> {(10, 80), (100, 20)}.
inline std::vector<std::pair<std::size_t, std::size_t>> parse_mix(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const std::string item(text.substr(pos, comma - pos));
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used_a = 0, used_b = 0;
      const auto a = std::stoull(item.substr(0, colon), &used_a);
      const auto b = std::stoull(item.substr(colon + 1), &used_b);
      if (used_a != colon || used_b != item.size() - colon - 1) throw std::invalid_argument(item);
      out.emplace_back(a, b);
    } catch (const std::logic_error&) {
      throw ConfigError("bad mix entry '" + item + "' (expected distance:count)");
    }
    pos = comma + 1;
  }
  return out;
}

/// Comma-separated items; an empty string gives an empty list.
inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    out.emplace_back(text.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

/// Accepts "inf" and the usual decimal forms.
inline double parse_real(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad value '" + text + "' for " + what);
  }
}

inline std::string resolve_backend_spec(const RunConfig& cfg) {
  if (!cfg.backend.empty()) return cfg.backend;
  const char* env = std::getenv(kBackendEnv);
  if (!env || !*env) throw ConfigError(std::string("no backend: pass --backend or set ") + kBackendEnv);
  const std::string url(env);
  for (const char* p : {"mock:", "http:", "openai:"})
    if (url.starts_with(p)) return url;
  return "http:" + url;
}

inline std::shared_ptr<const Backend> open_backend(const RunConfig& cfg, bool with_cache = true) {
  auto b = make_backend(resolve_backend_spec(cfg));
  if (cfg.masking && !b->supports_masking()) throw ConfigError("backend does not support attention masking");
  return with_cache ? cached(std::move(b), cfg.cache_capacity) : b;
}

inline std::size_t workers(const RunConfig& cfg, const Backend& b) {
  return cfg.parallel ? cfg.parallel : std::max<std::size_t>(1, b.max_parallel());
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

struct LoadedSequences {
  std::vector<SequenceSample> samples;
  std::vector<std::string> warnings;
};

inline LoadedSequences load_sequences(const SequenceInput& in, const RunConfig& cfg, const Backend& backend) {
  if (in.samples.empty() == in.corpus.empty()) throw ConfigError("give exactly one of --samples or --corpus");
  LoadedSequences out;
  if (!in.samples.empty()) {
    require_file(in.samples, "samples file");
    for (const auto& j : read_jsonl(in.samples)) out.samples.push_back(sample_from_json(j));
  } else {
    require_file(in.corpus, "corpus");
    const auto corpus = load_jsonl(in.corpus);
    for (const auto& e : corpus.errors)
      out.warnings.push_back("corpus line " + std::to_string(e.line) + ": " + e.message);
    const TokenCache cache(in.token_cache);
    SamplingOptions opts;
    opts.n_per_bucket = in.n_per_bucket;
    opts.offset = in.offset;
    const CounterRng root(cfg.seed);
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
      const auto& doc = corpus.documents[i];
      const auto toks = cache.tokens(doc, backend);
      auto got = sample_sequences(doc.id, toks, opts, root.split({1, i}).next_u64());
      for (auto& w : got.warnings) out.warnings.push_back(doc.id + ": " + w);
      for (auto& s : got.samples) out.samples.push_back(std::move(s));
    }
  }
  if (out.samples.empty()) throw DataError("no sequences to process");
  return out;
}

/// Work item outcome carrying an error that stops the run after its record is written.
template <class T>
struct Outcome {
  T value{};
  std::optional<ExitCode> code;
  std::string message;
};

inline void fail_with(ExitCode code, const std::string& message) { throw Error(code, message); }

struct ShareSummary {
  json b_hat = nullptr;
  json fit = nullptr;
  json share_le_32 = nullptr;
  json share_le_96 = nullptr;
};

inline ShareSummary summarize_lengths(const std::vector<ProbeResult>& resolved, Histogram* hist_out) {
  ShareSummary s;
  if (resolved.empty()) return s;
  const auto h = mcl_histogram(resolved);
  if (hist_out) *hist_out = h.histogram;
  s.fit = fit_to_json(h.fit);
  if (h.fit) s.b_hat = h.fit->slope();
  s.share_le_32 = aggregate_share(resolved, 32);
  s.share_le_96 = aggregate_share(resolved, 96);
  return s;
}

// ---------------------------------------------------------------- commands

inline int cmd_mcl(const RunConfig& cfg, const MclOptions& opt) {
  cfg.validate();
  const auto grid = cfg.prefix_grid();
  const auto backend = open_backend(cfg);
  const auto input = load_sequences(opt.input, cfg, *backend);
  const auto& samples = input.samples;

  struct Item {
    std::optional<ProbeResult> probe;
    std::string skipped;
  };
  JsonlWriter records(cfg.out / "mcl.jsonl");
  std::vector<ProbeResult> resolved;
  std::size_t unresolved = 0;
  std::map<std::string, std::size_t> skipped;

  ordered_parallel_map<Outcome<Item>>(
      samples.size(), workers(cfg, *backend),
      [&](std::size_t i) {
        Outcome<Item> o;
        const auto& s = samples[i];
        try {
          if (!s.next_token) {
            o.value.skipped = "no ground-truth next token";
          } else if (s.tokens.size() < grid.first_point()) {
            o.value.skipped = "shorter than the grid start";
          } else if (opt.filter &&
                     !correct_and_confident(full_distribution(s.tokens, *backend), *s.next_token, cfg.delta)) {
            o.value.skipped = "not confident-correct at full context";
          } else {
            o.value.probe = mcl(s.tokens, *s.next_token, cfg.delta, grid, *backend, cfg.truncation());
          }
        } catch (const ProbeError& e) {
          o.value.probe = e.partial();
          o.code = e.code();
          o.message = e.what();
        } catch (const Error& e) {
          o.code = e.code();
          o.message = e.what();
        }
        return o;
      },
      [&](std::size_t i, Outcome<Item>& o) {
        if (o.value.probe) {
          auto rec = probe_to_json(samples[i].seq_id, *o.value.probe);
          if (o.code) rec["error"] = o.message;
          records.write(std::move(rec));
          if (!o.code) {
            if (o.value.probe->resolved())
              resolved.push_back(std::move(*o.value.probe));
            else
              ++unresolved;
          }
        } else if (!o.value.skipped.empty()) {
          ++skipped[o.value.skipped];
        }
        if (o.code) fail_with(*o.code, samples[i].seq_id + ": " + o.message);
      });

  Histogram hist;
  const auto shares = summarize_lengths(resolved, &hist);
  write_atomic(cfg.out / "histogram.csv", histogram_csv(hist));
  write_report(cfg.out / "summary.json",
               json{{"command", "mcl"},
                    {"n_input", samples.size()},
                    {"n_probed", resolved.size() + unresolved},
                    {"n_resolved", resolved.size()},
                    {"n_unresolved", unresolved},
                    {"skipped", skipped},
                    {"warnings", input.warnings},
                    {"delta", cfg.delta},
                    {"grid", grid.to_string()},
                    {"seed", cfg.seed},
                    {"histogram", histogram_to_json(hist)},
                    {"fit", shares.fit},
                    {"b_hat", shares.b_hat},
                    {"share_le_32", shares.share_le_32},
                    {"share_le_96", shares.share_le_96}});
  if (resolved.empty()) throw DataError("no sequence produced a resolved MCL");
  return 0;
}

inline std::string combo_tag(const DecodingStrategy& s, double eps) {
  std::string tag = s.to_string();
  for (char& c : tag)
    if (c == ':') c = '-';
  return tag + "_eps" + num(eps);
}

inline int cmd_damcl(const RunConfig& cfg, const DamclOptions& opt) {
  cfg.validate();
  if (cfg.epsilons.empty()) throw ConfigError("need at least one epsilon");
  const auto metric = parse_metric(opt.metric);
  std::vector<DecodingStrategy> strategies;
  for (const auto& s : opt.strategies.empty() ? std::vector<std::string>{cfg.strategy} : opt.strategies)
    strategies.push_back(DecodingStrategy::parse(s));
  const auto grid = cfg.prefix_grid();
  const auto backend = open_backend(cfg);
  const auto input = load_sequences(opt.input, cfg, *backend);
  const auto& samples = input.samples;

  json combos = json::array();
  for (const auto& strategy : strategies) {
    for (double eps : cfg.epsilons) {
      const auto tag = combo_tag(strategy, eps);
      JsonlWriter records(cfg.out / ("damcl_" + tag + ".jsonl"));
      std::vector<ProbeResult> resolved;
      std::size_t unresolved = 0;
      ordered_parallel_map<Outcome<ProbeResult>>(
          samples.size(), workers(cfg, *backend),
          [&](std::size_t i) {
            Outcome<ProbeResult> o;
            try {
              o.value = damcl(samples[i].tokens, strategy, metric, eps, grid, *backend, cfg.truncation());
            } catch (const ProbeError& e) {
              o.value = e.partial();
              o.code = e.code();
              o.message = e.what();
            }
            return o;
          },
          [&](std::size_t i, Outcome<ProbeResult>& o) {
            auto rec = probe_to_json(samples[i].seq_id, o.value);
            if (o.code) rec["error"] = o.message;
            records.write(std::move(rec));
            if (o.code) fail_with(*o.code, samples[i].seq_id + ": " + o.message);
            if (o.value.resolved())
              resolved.push_back(std::move(o.value));
            else
              ++unresolved;
          });
      Histogram hist;
      const auto shares = summarize_lengths(resolved, &hist);
      const auto hist_file = "histogram_" + tag + ".csv";
      write_atomic(cfg.out / hist_file, histogram_csv(hist));
      combos.push_back(json{{"strategy", strategy.to_string()},
                            {"epsilon", eps},
                            {"records", "damcl_" + tag + ".jsonl"},
                            {"histogram_file", hist_file},
                            {"n_resolved", resolved.size()},
                            {"n_unresolved", unresolved},
                            {"fit", shares.fit},
                            {"b_hat", shares.b_hat},
                            {"share_le_32", shares.share_le_32},
                            {"share_le_96", shares.share_le_96}});
    }
  }
  write_report(cfg.out / "summary.json", json{{"command", "damcl"},
                                              {"metric", to_string(metric)},
                                              {"grid", grid.to_string()},
                                              {"n_input", samples.size()},
                                              {"warnings", input.warnings},
                                              {"seed", cfg.seed},
                                              {"runs", std::move(combos)}});
  return 0;
}

inline int cmd_detect(const RunConfig& cfg, const DetectOptions& opt) {
  cfg.validate();
  if (opt.oracle != "mcl" && opt.oracle != "lsd_lcl" && opt.oracle != "planted")
    throw ConfigError("unknown oracle '" + opt.oracle + "' (mcl, lsd_lcl, planted)");
  for (double t : opt.tau_sweep)
    if (!(t >= 0.0 && t <= max_jsd())) throw ConfigError("tau sweep values must lie in [0, sqrt(ln 2)]");
  LsdsConfig lcfg;
  lcfg.short_len = cfg.short_prefix();
  lcfg.strategy = cfg.decoding();
  lcfg.tau = cfg.tau;
  lcfg.validate();
  const auto grid = cfg.prefix_grid();
  const auto backend = open_backend(cfg);
  const auto input = load_sequences(opt.input, cfg, *backend);

  std::size_t missing = 0;
  for (const auto& s : input.samples)
    missing += opt.oracle == "planted" ? !s.label.has_value() : !s.next_token.has_value();
  if (missing)
    throw DataError(std::to_string(missing) + " samples lack the " +
                    (opt.oracle == "planted" ? "planted label" : "ground-truth next token") +
                    " needed by the " + opt.oracle + " oracle");

  std::vector<const SequenceSample*> samples;
  std::size_t too_short = 0;
  for (const auto& s : input.samples) {
    if (s.tokens.size() > lcfg.short_len.resolve(s.tokens.size()))
      samples.push_back(&s);
    else
      ++too_short;
  }

  struct Row {
    double lsds = 0.0;
    std::optional<ContextClass> oracle;
  };
  JsonlWriter records(cfg.out / "detect.jsonl");
  std::vector<LabeledScore> scored;
  std::vector<ContextClass> preds, oracles;
  std::size_t unlabelable = 0;

  ordered_parallel_map<Outcome<Row>>(
      samples.size(), workers(cfg, *backend),
      [&](std::size_t i) {
        Outcome<Row> o;
        const auto& s = *samples[i];
        try {
          o.value.lsds = lsds(s.tokens, lcfg, *backend, cfg.truncation());
          if (opt.oracle == "planted") {
            o.value.oracle = s.label;
          } else {
            try {
              o.value.oracle = opt.oracle == "mcl"
                                   ? mcl_oracle_label(s.tokens, *s.next_token, cfg.delta, grid, *backend)
                                   : lsd_lcl_oracle_label(s.tokens, *s.next_token, *backend, lcfg.short_len);
            } catch (const NotLabelableError&) {
              o.value.oracle.reset();
            }
          }
        } catch (const Error& e) {
          o.code = e.code();
          o.message = e.what();
        }
        return o;
      },
      [&](std::size_t i, Outcome<Row>& o) {
        if (o.code) fail_with(*o.code, samples[i]->seq_id + ": " + o.message);
        const auto pred = classify_score(o.value.lsds, cfg.tau);
        records.write(json{{"seq_id", samples[i]->seq_id},
                           {"lsds", o.value.lsds},
                           {"label_pred", to_string(pred)},
                           {"label_oracle", o.value.oracle ? json(to_string(*o.value.oracle)) : json(nullptr)},
                           {"oracle_kind", opt.oracle}});
        if (!o.value.oracle) {
          ++unlabelable;
          return;
        }
        scored.push_back({o.value.lsds, *o.value.oracle});
        preds.push_back(pred);
        oracles.push_back(*o.value.oracle);
      });

  json summary{{"command", "detect"},
               {"oracle_kind", opt.oracle},
               {"n_input", input.samples.size()},
               {"n_scored", scored.size()},
               {"n_unlabelable", unlabelable},
               {"n_too_short", too_short},
               {"tau", cfg.tau},
               {"short_len", lcfg.short_len.to_string()},
               {"strategy", lcfg.strategy.to_string()},
               {"warnings", input.warnings},
               {"seed", cfg.seed},
               {"auc", nullptr},
               {"youden", nullptr},
               {"confusion", confusion_to_json(confusion(preds, oracles))}};
  try {
    summary["auc"] = roc_auc(scored);
    summary["youden"] = youden_to_json(youden_threshold(scored));
  } catch (const DataError& e) {
    summary["note"] = std::string("AUC/Youden unavailable: ") + e.what();
  }
  if (!opt.tau_sweep.empty()) {
    std::ostringstream csv;
    csv << "tau,tp,fp,tn,fn,accuracy,tpr,fpr\n";
    json sweep = json::array();
    for (double t : opt.tau_sweep) {
      std::vector<ContextClass> p;
      for (const auto& s : scored) p.push_back(classify_score(s.score, t));
      const auto m = confusion(p, oracles);
      const double tpr = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
      const double fpr = m.fp + m.tn ? static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn) : 0.0;
      csv << num(t) << ',' << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn << ',' << num(m.accuracy()) << ','
          << num(tpr) << ',' << num(fpr) << '\n';
      auto row = confusion_to_json(m);
      row["tau"] = t;
      row["tpr"] = tpr;
      row["fpr"] = fpr;
      sweep.push_back(std::move(row));
    }
    write_atomic(cfg.out / "tau_sweep.csv", csv.str());
    summary["tau_sweep"] = std::move(sweep);
  }
  write_report(cfg.out / "summary.json", std::move(summary));
  return 0;
}

inline int cmd_generate(const RunConfig& cfg, const GenerateOptions& opt) {
  cfg.validate();
  if (opt.n_samples < 1) throw ConfigError("n-samples must be >= 1");
  if (opt.max_new < 1) throw ConfigError("max-new must be >= 1");
  GenerationConfig gc;
  gc.method = parse_method(opt.method);
  if (gc.method == Method::taboo && !cfg.lambda) throw ConfigError("--lambda is required for the taboo method");
  gc.boost.gamma = cfg.gamma;
  gc.boost.epsilon = cfg.boost_epsilon;
  gc.boost.lambda = cfg.lambda.value_or(1.0);
  gc.boost.strategy = cfg.decoding();
  gc.boost.short_len = cfg.short_len;
  gc.cad_alpha = cfg.alpha;
  gc.boost.validate();
  require_file(opt.prompts, "prompts file");
  const auto backend = open_backend(cfg);

  struct Prompt {
    std::string id;
    std::vector<TokenId> tokens;
    std::optional<std::string> gold;
  };
  std::vector<Prompt> prompts;
  for (const auto& j : read_jsonl(opt.prompts)) {
    try {
      Prompt p;
      p.id = j.contains("id") ? j["id"].get<std::string>() : std::to_string(prompts.size());
      if (j.contains("tokens"))
        p.tokens = j["tokens"].get<std::vector<TokenId>>();
      else
        p.tokens = backend->tokenize(j.at("prompt").get<std::string>());
      if (j.contains("gold") && !j["gold"].is_null()) p.gold = j["gold"].get<std::string>();
      prompts.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed prompt record: ") + e.what());
    }
  }
  if (prompts.empty()) throw DataError("no prompts");
  if (!opt.gold.empty()) {
    require_file(opt.gold, "gold file");
    std::map<std::string, std::string> gold;
    for (const auto& j : read_jsonl(opt.gold)) {
      try {
        gold[j.at("id").get<std::string>()] = j.at("gold").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError(std::string("malformed gold record: ") + e.what());
      }
    }
    for (auto& p : prompts)
      if (auto it = gold.find(p.id); it != gold.end()) p.gold = it->second;
  }

  const auto config_json = boost_config_to_json(gc);
  const CounterRng root(cfg.seed);
  const std::size_t n = prompts.size() * opt.n_samples;
  JsonlWriter records(cfg.out / "generations.jsonl");
  std::vector<std::vector<ScoredAnswer>> scores(prompts.size());
  std::size_t failures = 0;
  ExitCode worst = ExitCode::ok;

  ordered_parallel_map<Outcome<GenerationResult>>(
      n, workers(cfg, *backend),
      [&](std::size_t k) {
        Outcome<GenerationResult> o;
        const auto& p = prompts[k / opt.n_samples];
        const auto seed = root.split({k / opt.n_samples, k % opt.n_samples}).next_u64();
        try {
          o.value = generate(p.tokens, opt.max_new, gc, seed, *backend);
        } catch (const Error& e) {
          o.code = e.code();
          o.message = e.what();
        }
        return o;
      },
      [&](std::size_t k, Outcome<GenerationResult>& o) {
        if (o.code) fail_with(*o.code, prompts[k / opt.n_samples].id + ": " + o.message);
        const auto& p = prompts[k / opt.n_samples];
        const auto& g = o.value;
        json steps = json::array();
        for (const auto& r : g.reports) steps.push_back(report_to_json(r));
        const auto text = backend->detokenize(g.tokens);
        json rec{{"prompt_id", p.id},
                 {"sample", k % opt.n_samples},
                 {"seed", root.split({k / opt.n_samples, k % opt.n_samples}).next_u64()},
                 {"tokens", g.tokens},
                 {"text", text},
                 {"method", to_string(gc.method)},
                 {"config", config_json},
                 {"stopped_on_eos", g.stopped_on_eos},
                 {"steps", std::move(steps)}};
        if (g.error) {
          rec["error"] = *g.error;
          ++failures;
          if (static_cast<int>(g.error_code) > static_cast<int>(worst)) worst = g.error_code;
        }
        if (p.gold) {
          const auto sc = score_answer(text, *p.gold);
          scores[k / opt.n_samples].push_back(sc);
          rec["scores"] = json{{"f1", sc.f1}, {"bleu", sc.bleu}, {"rouge_l", sc.rouge_l}};
        }
        records.write(std::move(rec));
      });

  json summary{{"command", "generate"},
               {"method", to_string(gc.method)},
               {"config", config_json},
               {"n_prompts", prompts.size()},
               {"n_samples", opt.n_samples},
               {"max_new", opt.max_new},
               {"n_failed", failures},
               {"seed", cfg.seed}};
  ScoredAnswer avg, best;
  std::size_t n_scored = 0, n_examples = 0;
  for (const auto& per_prompt : scores) {
    if (per_prompt.empty()) continue;
    ++n_examples;
    ScoredAnswer b;
    for (const auto& s : per_prompt) {
      avg.f1 += s.f1;
      avg.bleu += s.bleu;
      avg.rouge_l += s.rouge_l;
      b.f1 = std::max(b.f1, s.f1);
      b.bleu = std::max(b.bleu, s.bleu);
      b.rouge_l = std::max(b.rouge_l, s.rouge_l);
      ++n_scored;
    }
    best.f1 += b.f1;
    best.bleu += b.bleu;
    best.rouge_l += b.rouge_l;
  }
  if (n_examples) {
    const auto as_json = [](const ScoredAnswer& s, std::size_t d) {
      const auto den = static_cast<double>(d);
      return json{{"f1", s.f1 / den}, {"bleu", s.bleu / den}, {"rouge_l", s.rouge_l / den}};
    };
    summary["scores"] = json{{"n_examples", n_examples},
                             {"n_generations", n_scored},
                             {"average", as_json(avg, n_scored)},
                             {"best_per_example", as_json(best, n_examples)}};
  }
  write_report(cfg.out / "summary.json", std::move(summary));
  if (failures) fail_with(worst, std::to_string(failures) + " generation(s) stopped on an error");
  return 0;
}

inline int cmd_bench(const RunConfig& cfg, const BenchOptions& opt) {
  cfg.validate();
  if (opt.lengths.empty()) throw ConfigError("empty length schedule");
  if (opt.repeats < 1) throw ConfigError("repeats must be >= 1");
  const auto strategy = cfg.decoding();
  // timing must reach the model every time, so no cache here
  const auto backend = open_backend(cfg, false);
  const auto vocab = backend->vocab_size();
  using clock = std::chrono::steady_clock;
  const auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };

  std::ostringstream csv;
  csv << "len,full_ms,extra_ms,ratio\n";
  json rows = json::array();
  for (std::size_t len : opt.lengths) {
    if (len <= cfg.short_len) throw ConfigError("bench lengths must exceed the short prefix length");
    CounterRng rng = CounterRng(cfg.seed).split(len);
    std::vector<TokenId> s(len);
    for (auto& t : s) t = static_cast<TokenId>(rng.uniform_int(0, vocab - 1));
    double full_ms = 0.0, extra_ms = 0.0;
    for (std::size_t r = 0; r < opt.repeats; ++r) {
      const auto t0 = clock::now();
      const auto full = full_distribution(s, *backend);
      const auto t1 = clock::now();
      const auto shrt = prefix_distribution(s, cfg.short_len, *backend, cfg.truncation());
      volatile double score = jsd(apply_strategy(shrt, strategy), apply_strategy(full, strategy));
      (void)score;
      const auto t2 = clock::now();
      full_ms += ms(t1 - t0);
      extra_ms += ms(t2 - t1);
    }
    full_ms /= static_cast<double>(opt.repeats);
    extra_ms /= static_cast<double>(opt.repeats);
    const double ratio = full_ms > 0.0 ? extra_ms / full_ms : 0.0;
    csv << len << ',' << num(full_ms) << ',' << num(extra_ms) << ',' << num(ratio) << '\n';
    rows.push_back(json{{"len", len}, {"full_ms", full_ms}, {"extra_ms", extra_ms}, {"ratio", ratio}});
  }
  write_atomic(cfg.out / "bench.csv", csv.str());
  write_report(cfg.out / "bench.json", json{{"command", "bench"},
                                            {"short_len", cfg.short_len},
                                            {"repeats", opt.repeats},
                                            {"strategy", strategy.to_string()},
                                            {"rows", std::move(rows)}});
  return 0;
}

inline int cmd_score(const RunConfig& cfg, const ScoreOptions& opt) {
  require_file(opt.input, "score input");
  const auto rows = read_jsonl(opt.input);
  if (rows.empty()) throw DataError("no rows to score");
  JsonlWriter out(cfg.out / "scores.jsonl");
  ScoredAnswer total;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string pred, gold;
    try {
      pred = rows[i].at("pred").get<std::string>();
      gold = rows[i].at("gold").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError("row " + std::to_string(i + 1) + ": " + e.what());
    }
    const auto s = score_answer(pred, gold);
    total.f1 += s.f1;
    total.bleu += s.bleu;
    total.rouge_l += s.rouge_l;
    json rec{{"row", i}, {"f1", s.f1}, {"bleu", s.bleu}, {"rouge_l", s.rouge_l}};
    if (rows[i].contains("id")) rec["id"] = rows[i]["id"];
    out.write(std::move(rec));
  }
  const auto n = static_cast<double>(rows.size());
  write_report(cfg.out / "summary.json", json{{"command", "score"},
                                              {"n", rows.size()},
                                              {"f1", total.f1 / n},
                                              {"bleu", total.bleu / n},
                                              {"rouge_l", total.rouge_l / n}});
  return 0;
}

/// Classic passkey-retrieval filler, used when no filler file is given.
inline constexpr const char* kDefaultFiller =
    "The grass is green . The sky is blue . The sun is yellow . Here we go . There and back again . ";

inline int cmd_synth(const RunConfig& cfg, const SynthOptions& opt) {
  if (opt.mix.empty()) throw ConfigError("synth needs --mix distance:count[,...]");
  if (opt.kind != "kv" && opt.kind != "niah" && opt.kind != "longeval")
    throw ConfigError("unknown synthetic kind '" + opt.kind + "' (kv, niah, longeval)");

  std::shared_ptr<const Backend> backend;
  std::vector<TokenId> filler;
  if (opt.kind != "kv") {
    backend = open_backend(cfg, false);
    if (opt.kind == "niah") {
      std::string text = kDefaultFiller;
      if (!opt.filler.empty()) {
        require_file(opt.filler, "filler file");
        std::ifstream in(opt.filler);
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
      }
      const auto unit = backend->tokenize(text);
      if (unit.empty()) throw DataError("filler text produced no tokens");
      while (filler.size() < opt.length) filler.insert(filler.end(), unit.begin(), unit.end());
    }
  }

  JsonlWriter out(cfg.out / "samples.jsonl");
  const CounterRng root(cfg.seed);
  std::size_t k = 0, n_short = 0, n_long = 0;
  for (const auto& [distance, count] : opt.mix) {
    for (std::size_t c = 0; c < count; ++c, ++k) {
      const auto seed = root.split(k).next_u64();
      SyntheticCase sc;
      if (opt.kind == "kv") {
        KeyValueSpec spec;
        spec.length = opt.length;
        spec.distance = distance;
        spec.vocab_size = opt.vocab;
        spec.key = static_cast<TokenId>(opt.vocab - 1);
        spec.fallback = static_cast<TokenId>(opt.vocab - 2);
        spec.window = opt.window;
        sc = gen_key_value(spec, seed);
      } else if (opt.kind == "niah") {
        if (distance < 1 || distance > opt.length) throw ConfigError("needle distance must lie in [1, length]");
        NiahSpec spec;
        spec.total_len = opt.length;
        spec.needle_pos = opt.length - distance;
        spec.window = opt.window;
        sc = gen_niah(spec, filler, seed, *backend);
      } else {
        if (distance < 1 || distance > opt.lines) throw ConfigError("line distance must lie in [1, lines]");
        LongEvalSpec spec;
        spec.num_lines = opt.lines;
        spec.target_line = opt.lines - distance + 1;
        spec.window = opt.window;
        if (opt.answer == "line_id")
          spec.answer = LongEvalSpec::Answer::line_id;
        else if (opt.answer != "content")
          throw ConfigError("answer must be content or line_id");
        sc = gen_longeval(spec, seed, *backend);
      }
      sc.sample.seq_id += ":" + std::to_string(k);
      (sc.label == ContextClass::short_context ? n_short : n_long) += 1;
      auto rec = sample_to_json(sc.sample);
      rec["answer_text"] = sc.answer_text;
      rec["answer_tokens"] = sc.answer_tokens;
      out.write(std::move(rec));
    }
  }
  write_report(cfg.out / "synth_summary.json", json{{"command", "synth"},
                                                    {"kind", opt.kind},
                                                    {"n", k},
                                                    {"n_short", n_short},
                                                    {"n_long", n_long},
                                                    {"window", opt.window},
                                                    {"seed", cfg.seed}});
  return 0;
}

/// Runs fn, mapping library errors to exit codes with a one-line message.
template <class F>
int run_guarded(F&& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
}

}  // namespace ctxlens::cli
