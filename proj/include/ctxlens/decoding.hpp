#pragma once

/**
 * Decoding strategies: maps from a raw next-token distribution to the
 * truncated, renormalized distribution a sampler would actually draw from.
 *
 *   greedy        top-1 token only (same as topk:1)
 *   topk:K        K most probable tokens
 *   nucleus:P     smallest probability-sorted prefix with mass >= P
 *   adaptive:E    probability-sorted prefix through the last token with p >= E
 *
 * Sorting is by descending probability, ties broken by ascending token id.
 * Zero-probability tokens are never selected.
 */

#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ctxlens {

class DecodingStrategy {
 public:
  enum class Kind { greedy, top_k, nucleus, adaptive };

  static DecodingStrategy greedy() { return DecodingStrategy(Kind::greedy, 1, 0.0); }

  static DecodingStrategy top_k(long k) {
    if (k < 1) throw ConfigError("top-k requires k >= 1, got " + std::to_string(k));
    return DecodingStrategy(Kind::top_k, static_cast<std::size_t>(k), 0.0);
  }

  static DecodingStrategy nucleus(double p = 0.9) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("nucleus requires p in (0, 1]");
    return DecodingStrategy(Kind::nucleus, 0, p);
  }

  static DecodingStrategy adaptive(double epsilon = 0.001) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("adaptive requires epsilon in (0, 1)");
    return DecodingStrategy(Kind::adaptive, 0, epsilon);
  }

  /// Parses "greedy", "topk:5", "nucleus:0.9" or "adaptive:0.001".
  static DecodingStrategy parse(std::string_view text) {
    const auto colon = text.find(':');
    const auto name = text.substr(0, colon);
    const auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    auto number = [&](auto& out) {
      const auto* end = arg.data() + arg.size();
      auto [ptr, ec] = std::from_chars(arg.data(), end, out);
      if (arg.empty() || ec != std::errc{} || ptr != end)
        throw ConfigError("bad strategy parameter in '" + std::string(text) + "'");
    };
    if (name == "greedy" && arg.empty() && colon == std::string_view::npos) return greedy();
    if (name == "topk") {
      long k = 0;
      number(k);
      return top_k(k);
    }
    if (name == "nucleus") {
      double p = 0;
      number(p);
      return nucleus(p);
    }
    if (name == "adaptive") {
      double e = 0;
      number(e);
      return adaptive(e);
    }
    throw ConfigError("unknown decoding strategy '" + std::string(text) + "'");
  }

  std::string to_string() const {
    std::ostringstream os;
    switch (kind_) {
      case Kind::greedy: return "greedy";
      case Kind::top_k: os << "topk:" << k_; break;
      case Kind::nucleus: os << "nucleus:" << param_; break;
      case Kind::adaptive: os << "adaptive:" << param_; break;
    }
    return os.str();
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t k() const noexcept { return k_; }
  double p() const noexcept { return param_; }
  double epsilon() const noexcept { return param_; }

  bool operator==(const DecodingStrategy&) const = default;

 private:
  DecodingStrategy(Kind kind, std::size_t k, double param) : kind_(kind), k_(k), param_(param) {}

  Kind kind_;
  std::size_t k_;
  double param_;
};

/// Token ids ordered by descending probability, ties by ascending id.
inline std::vector<TokenId> rank_order(const TokenDistribution& d) {
  const auto p = d.probs();
  std::vector<TokenId> ids(p.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
    const double pa = p[static_cast<std::size_t>(a)];
    const double pb = p[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  return ids;
}

/// The token ids a strategy keeps, in rank order.
inline std::vector<TokenId> selected_tokens(const TokenDistribution& raw,
                                            const DecodingStrategy& strategy) {
  const auto p = raw.probs();
  const auto order = rank_order(raw);
  std::vector<TokenId> keep;
  auto prob = [&](TokenId t) { return p[static_cast<std::size_t>(t)]; };

  switch (strategy.kind()) {
    case DecodingStrategy::Kind::greedy:
    case DecodingStrategy::Kind::top_k: {
      const std::size_t k = strategy.kind() == DecodingStrategy::Kind::greedy ? 1 : strategy.k();
      for (TokenId t : order) {
        if (keep.size() == k || prob(t) == 0.0) break;
        keep.push_back(t);
      }
      break;
    }
    case DecodingStrategy::Kind::nucleus: {
      double cumulative = 0.0;
      for (TokenId t : order) {
        if (prob(t) == 0.0) break;
        keep.push_back(t);
        cumulative += prob(t);
        if (cumulative >= strategy.p()) break;
      }
      break;
    }
    case DecodingStrategy::Kind::adaptive: {
      for (TokenId t : order) {
        if (prob(t) < strategy.epsilon() && !keep.empty()) break;
        keep.push_back(t);
      }
      break;
    }
  }
  return keep;
}

/// Zeroes every entry outside `keep` and renormalizes the rest.
inline TokenDistribution restrict_to(const TokenDistribution& raw, std::vector<TokenId> keep) {
  std::sort(keep.begin(), keep.end());
  const auto p = raw.probs();
  double total = 0.0;
  for (TokenId t : keep) total += p[static_cast<std::size_t>(t)];
  if (!(total > 0.0)) throw DataError("restriction to a zero-mass token set");
  std::vector<double> out(p.size(), 0.0);
  for (TokenId t : keep) out[static_cast<std::size_t>(t)] = p[static_cast<std::size_t>(t)] / total;
  return TokenDistribution(std::move(out));
}

inline TokenDistribution apply_strategy(const TokenDistribution& raw,
                                        const DecodingStrategy& strategy) {
  return restrict_to(raw, selected_tokens(raw, strategy));
}

/// Argmax, lowest id on ties.
inline TokenId top1(const TokenDistribution& d) {
  const auto p = d.probs();
  std::size_t best = 0;
  for (std::size_t t = 1; t < p.size(); ++t)
    if (p[t] > p[best]) best = t;
  return static_cast<TokenId>(best);
}

/// Probability gap between the two most likely tokens.
inline double confidence(const TokenDistribution& d) {
  const auto p = d.probs();
  if (p.size() < 2) throw DimensionError("confidence needs a vocabulary of at least 2 tokens");
  double first = -1.0, second = -1.0;
  for (double v : p) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first - second;
}

/// Inverse-CDF draw in token-id order.
inline TokenId sample(const TokenDistribution& d, CounterRng& rng) {
  const double u = rng.next_double();
  const auto p = d.probs();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t] == 0.0) continue;
    last_positive = t;
    cumulative += p[t];
    if (u < cumulative) return static_cast<TokenId>(t);
  }
  // u landed in the rounding slack above the final cumulative sum
  return static_cast<TokenId>(last_positive);
}

inline TokenId sample(const TokenDistribution& d, std::uint64_t seed) {
  CounterRng rng(seed);
  return sample(d, rng);
}

}  // namespace ctxlens
