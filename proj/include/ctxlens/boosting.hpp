#pragma once

/**
 * Decode-time correction of short-context bias.
 *
 * taboo_step: targeted boosting. If the sequence looks long-context
 *   (LSDS > gamma), tokens whose decoded probability rises by more than
 *   epsilon when moving from the short to the full context get their
 *   probability multiplied by lambda; the result is renormalized and the
 *   decoding strategy applied again.
 * cad_step: context-aware decoding baseline. Every token is reweighted by
 *   p_full^(1+alpha) * p_short^(-alpha), no gating.
 * generate: autoregressive loop over one of {vanilla, cad, taboo}.
 */

#include "ctxlens/decoding.hpp"
#include "ctxlens/detection.hpp"
#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/rng.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ctxlens {

struct BoostConfig {
  double gamma = kDefaultGamma;
  double epsilon = 0.05;
  double lambda = 1.0;
  DecodingStrategy strategy = DecodingStrategy::nucleus(0.9);
  std::size_t short_len = 32;

  void validate() const {
    // gamma = +inf disables boosting entirely, which is a legitimate setting
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (!(lambda >= 1.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 1");
    if (short_len < 1) throw ConfigError("short_len must be >= 1");
  }
};

struct BoostReport {
  std::size_t step = 0;
  std::optional<double> lsds;
  SupportSet boosted_set;
  TokenDistribution pre_dist;
  TokenDistribution post_dist;
  TokenId chosen = -1;
  std::optional<Scenario> scenario;
  std::optional<std::string> warning;
};

struct StepOutput {
  TokenDistribution dist;
  BoostReport report;
};

/**
 * Scales `boosted` entries of the raw distribution by lambda, renormalizes
 * and applies the strategy.
 *
 * Truncation is measured against the model's whole distribution, so with
 * lambda = 1 this reproduces apply_strategy(raw) and for nucleus decoding
 * the result never leaves the pre-boost nucleus.
 */
inline TokenDistribution boost(const TokenDistribution& raw, const SupportSet& boosted, double lambda,
                               const DecodingStrategy& strategy) {
  const auto p = raw.probs();
  std::vector<double> w(p.begin(), p.end());
  for (TokenId t : boosted) w[static_cast<std::size_t>(t)] *= lambda;
  return apply_strategy(TokenDistribution::normalized(std::move(w)), strategy);
}

inline StepOutput taboo_step(std::span<const TokenId> s, const BoostConfig& cfg, const Backend& backend) {
  cfg.validate();
  StepOutput out;
  if (s.size() <= cfg.short_len) {
    auto d = apply_strategy(full_distribution(s, backend), cfg.strategy);
    out.report.pre_dist = d;
    out.report.post_dist = d;
    out.report.warning = "sequence not longer than the short prefix; decoded without boosting";
    out.dist = std::move(d);
    return out;
  }

  const auto raw = raw_short_full(s, ShortPrefix::fixed(cfg.short_len), backend);
  const auto decoded = decode(raw, cfg.strategy);
  const double shift = lsds(decoded);
  out.report.lsds = shift;
  out.report.pre_dist = decoded.full_ctx;

  if (shift <= cfg.gamma) {
    out.report.post_dist = decoded.full_ctx;
    out.dist = decoded.full_ctx;
    return out;
  }

  std::vector<TokenId> selected;
  for (TokenId t : SupportSet::of(decoded.full_ctx))
    if (lsps(t, decoded) > cfg.epsilon) selected.push_back(t);
  out.report.boosted_set = SupportSet(std::move(selected));

  out.dist = out.report.boosted_set.empty()
                 ? decoded.full_ctx
                 : boost(raw.full_ctx, out.report.boosted_set, cfg.lambda, cfg.strategy);
  out.report.post_dist = out.dist;
  return out;
}

/// p_full^(1+alpha) * max(p_short, 1e-6)^(-alpha), renormalized, then decoded.
inline TokenDistribution cad_reweight(const ShortFull& raw, double alpha, const DecodingStrategy& strategy) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (raw.full_ctx.vocab_size() != raw.short_ctx.vocab_size())
    throw DimensionError("short/full vocabularies differ");
  const auto pf = raw.full_ctx.probs();
  const auto ps = raw.short_ctx.probs();
  std::vector<double> w(pf.size());
  for (std::size_t t = 0; t < w.size(); ++t)
    w[t] = std::pow(pf[t], 1.0 + alpha) * std::pow(std::max(ps[t], kProbFloor), -alpha);
  return apply_strategy(TokenDistribution::normalized(std::move(w)), strategy);
}

inline TokenDistribution cad_step(std::span<const TokenId> s, double alpha, const DecodingStrategy& strategy,
                                  const Backend& backend, std::size_t short_len = 32) {
  if (s.size() <= short_len) return apply_strategy(full_distribution(s, backend), strategy);
  return cad_reweight(raw_short_full(s, ShortPrefix::fixed(short_len), backend), alpha, strategy);
}

enum class Method { vanilla, cad, taboo };

inline const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::cad: return "cad";
    case Method::taboo: return "taboo";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (Method m : {Method::vanilla, Method::cad, Method::taboo})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown generation method '" + std::string(name) + "'");
}

struct GenerationConfig {
  Method method = Method::vanilla;
  BoostConfig boost;  // strategy and short_len are shared by all methods
  double cad_alpha = 0.5;
};

struct GenerationResult {
  std::vector<TokenId> tokens;  // generated continuation only
  std::vector<BoostReport> reports;
  std::optional<std::string> error;
  ExitCode error_code = ExitCode::ok;
  bool stopped_on_eos = false;
};

inline StepOutput method_step(std::span<const TokenId> s, const GenerationConfig& cfg, const Backend& backend) {
  switch (cfg.method) {
    case Method::taboo: return taboo_step(s, cfg.boost, backend);
    case Method::cad: {
      StepOutput out;
      out.report.pre_dist = apply_strategy(full_distribution(s, backend), cfg.boost.strategy);
      out.dist = cad_step(s, cfg.cad_alpha, cfg.boost.strategy, backend, cfg.boost.short_len);
      out.report.post_dist = out.dist;
      return out;
    }
    case Method::vanilla: break;
  }
  StepOutput out;
  out.dist = apply_strategy(full_distribution(s, backend), cfg.boost.strategy);
  out.report.pre_dist = out.dist;
  out.report.post_dist = out.dist;
  return out;
}

/// Step i draws from CounterRng(seed).split(i), so runs are reproducible per seed.
inline GenerationResult generate(std::span<const TokenId> prompt, std::size_t max_new,
                                 const GenerationConfig& cfg, std::uint64_t seed, const Backend& backend) {
  if (max_new < 1) throw ConfigError("max_new must be >= 1");
  if (prompt.empty()) throw DataError("empty prompt");
  cfg.boost.validate();

  GenerationResult out;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  const CounterRng root(seed);
  const auto eos = backend.eos_token();
  for (std::size_t step = 0; step < max_new; ++step) {
    try {
      auto [dist, report] = method_step(context, cfg, backend);
      auto rng = root.split(step);
      const TokenId t = sample(dist, rng);
      report.step = step;
      report.chosen = t;
      out.reports.push_back(std::move(report));
      out.tokens.push_back(t);
      context.push_back(t);
      if (eos && t == *eos) {
        out.stopped_on_eos = true;
        break;
      }
    } catch (const Error& e) {
      out.error = e.what();
      out.error_code = e.code();
      break;
    }
  }
  return out;
}

}  // namespace ctxlens
