#pragma once

/**
 * Long-context detection without ground truth, plus the labelers and
 * token-level shift measures used to validate it.
 *
 * LSDS(s) = JSD(phi(s[-32:]), phi(s)) for a decoding strategy phi. A
 * sequence is called long-context when LSDS >= tau.
 */

#include "ctxlens/context_probe.hpp"
#include "ctxlens/decoding.hpp"
#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/sample.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <variant>

namespace ctxlens {

inline constexpr double kDefaultTau = 0.6;
inline constexpr double kDefaultGamma = 0.1225;
/// Floor applied before taking logs of probabilities (LSPR, LSD, CAD).
inline constexpr double kProbFloor = 1e-6;

/// Length of the "short" context: a fixed token count or a fraction of |s|.
struct ShortPrefix {
  std::size_t tokens = 32;
  std::optional<double> fraction;

  static ShortPrefix fixed(std::size_t n) { return ShortPrefix{n, std::nullopt}; }
  static ShortPrefix relative(double f) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("short prefix fraction must lie in (0, 1)");
    return ShortPrefix{0, f};
  }

  /// Fractional prefixes round down, with a minimum of one token.
  std::size_t resolve(std::size_t n) const {
    if (fraction)
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(*fraction * static_cast<double>(n))));
    return tokens;
  }

  void validate() const {
    if (fraction) {
      if (!(*fraction > 0.0 && *fraction < 1.0)) throw ConfigError("short prefix fraction must lie in (0, 1)");
    } else if (tokens < 1) {
      throw ConfigError("short prefix length must be >= 1");
    }
  }

  std::string to_string() const {
    return fraction ? std::to_string(*fraction) + "|s|" : std::to_string(tokens);
  }

  bool operator==(const ShortPrefix&) const = default;
};

struct LsdsConfig {
  ShortPrefix short_len;
  DecodingStrategy strategy = DecodingStrategy::nucleus(0.9);
  double tau = kDefaultTau;
  double gamma = kDefaultGamma;

  void validate() const {
    short_len.validate();
    const double hi = max_jsd();
    if (!(tau >= 0.0 && tau <= hi)) throw ConfigError("tau must lie in [0, sqrt(ln 2)]");
    if (!(gamma >= 0.0 && gamma <= hi)) throw ConfigError("gamma must lie in [0, sqrt(ln 2)]");
  }
};

/// Short- and full-context distributions of the same sequence.
struct ShortFull {
  TokenDistribution short_ctx;
  TokenDistribution full_ctx;
};

inline std::size_t checked_short_length(std::span<const TokenId> s, const ShortPrefix& prefix) {
  const auto ell = prefix.resolve(s.size());
  if (s.size() <= ell)
    throw DataError("sequence shorter than short prefix (" + std::to_string(s.size()) +
                    " <= " + std::to_string(ell) + ")");
  return ell;
}

inline ShortFull raw_short_full(std::span<const TokenId> s, const ShortPrefix& prefix,
                                const Backend& backend, Truncation mode = Truncation::suffix) {
  const auto ell = checked_short_length(s, prefix);
  return {prefix_distribution(s, ell, backend, mode), full_distribution(s, backend)};
}

inline ShortFull decode(const ShortFull& raw, const DecodingStrategy& strategy) {
  return {apply_strategy(raw.short_ctx, strategy), apply_strategy(raw.full_ctx, strategy)};
}

inline double lsds(const ShortFull& decoded) { return jsd(decoded.short_ctx, decoded.full_ctx); }

inline double lsds(std::span<const TokenId> s, const LsdsConfig& cfg, const Backend& backend,
                   Truncation mode = Truncation::suffix) {
  return lsds(decode(raw_short_full(s, cfg.short_len, backend, mode), cfg.strategy));
}

/// Boundary counts as long.
inline ContextClass classify_score(double lsds_value, double tau) {
  return lsds_value >= tau ? ContextClass::long_context : ContextClass::short_context;
}

inline ContextClass classify(std::span<const TokenId> s, const LsdsConfig& cfg, const Backend& backend) {
  return classify_score(lsds(s, cfg, backend), cfg.tau);
}

class NotLabelableError : public DataError {
 public:
  using DataError::DataError;
};

/// Long iff the MCL exceeds the first grid point (the shortest prefix ever tested).
inline ContextClass mcl_oracle_label(std::span<const TokenId> s, TokenId t, double delta,
                                     const PrefixGrid& grid, const Backend& backend) {
  const auto r = mcl(s, t, delta, grid, backend);
  if (!r.resolved_length) throw NotLabelableError("MCL unresolved: sequence is not labelable");
  return *r.resolved_length > grid.first_point() ? ContextClass::long_context
                                                 : ContextClass::short_context;
}

struct LsdLcl {
  double lsd = 0.0;  // log p(s)_t - log p(s[-32:])_t
  double lcl = 0.0;  // log p(s)_t
  ContextClass label = ContextClass::short_context;
};

inline LsdLcl lsd_lcl_from(const ShortFull& raw, TokenId t) {
  if (!raw.full_ctx.contains(t)) throw RequestError("target token outside vocabulary");
  const double pf = raw.full_ctx[t];
  const double ps = raw.short_ctx[t];
  LsdLcl out;
  out.lsd = std::log(std::max(pf, kProbFloor)) - std::log(std::max(ps, kProbFloor));
  out.lcl = std::log(pf);
  out.label = out.lsd > 2.0 && out.lcl >= -1.0 ? ContextClass::long_context : ContextClass::short_context;
  return out;
}

/// Log-probability lift labeler on raw (undecoded) distributions.
inline LsdLcl lsd_lcl_oracle(std::span<const TokenId> s, TokenId t, const Backend& backend,
                             const ShortPrefix& prefix = {}) {
  return lsd_lcl_from(raw_short_full(s, prefix, backend), t);
}

inline ContextClass lsd_lcl_oracle_label(std::span<const TokenId> s, TokenId t, const Backend& backend,
                                         const ShortPrefix& prefix = {}) {
  return lsd_lcl_oracle(s, t, backend, prefix).label;
}

/// [phi(s)]_t - [phi(s[-32:])]_t
inline double lsps(TokenId t, const ShortFull& decoded) {
  if (!decoded.full_ctx.contains(t)) throw RequestError("token outside vocabulary");
  return decoded.full_ctx[t] - decoded.short_ctx[t];
}

inline double lsps(TokenId t, std::span<const TokenId> s, const LsdsConfig& cfg, const Backend& backend) {
  return lsps(t, decode(raw_short_full(s, cfg.short_len, backend), cfg.strategy));
}

/// log of the full/short probability ratio, both floored at 1e-6.
inline double lspr(TokenId t, const ShortFull& decoded) {
  if (!decoded.full_ctx.contains(t)) throw RequestError("token outside vocabulary");
  return std::log(std::max(decoded.full_ctx[t], kProbFloor)) -
         std::log(std::max(decoded.short_ctx[t], kProbFloor));
}

inline double lspr(TokenId t, std::span<const TokenId> s, const LsdsConfig& cfg, const Backend& backend) {
  return lspr(t, decode(raw_short_full(s, cfg.short_len, backend), cfg.strategy));
}

enum class Scenario { best, bad, worst, neutral };

inline const char* to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::best: return "best";
    case Scenario::bad: return "bad";
    case Scenario::worst: return "worst";
    case Scenario::neutral: return "neutral";
  }
  return "?";
}

/**
 * Outcome of a boosting selection B for the true token t_hat:
 *   best     t_hat in B and no token in B is more probable
 *   bad      t_hat in B but some token in B is more probable
 *   worst    B non-empty and t_hat not in it
 *   neutral  B empty
 */
inline Scenario scenario(TokenId t_hat, const SupportSet& boosted, const TokenDistribution& full) {
  if (boosted.empty()) return Scenario::neutral;
  if (!boosted.contains(t_hat)) return Scenario::worst;
  const double p_hat = full[t_hat];
  for (TokenId t : boosted)
    if (full[t] > p_hat) return Scenario::bad;
  return Scenario::best;
}

}  // namespace ctxlens
