#pragma once

/**
 * Next-token distributions and the divergences computed between them.
 *
 * Every quantity the toolkit reports (MCL, DaMCL, LSDS, LSPS, boosting) is a
 * function of one or two TokenDistribution values, so this header is the
 * numerical floor of the library. All functions are pure.
 *
 * Logarithms default to the natural base: JSD then lies in [0, sqrt(ln 2)].
 * Pass LogBase::two to get bits instead (JSD max becomes 1).
 */

#include "ctxlens/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxlens {

using TokenId = std::int32_t;

/// Absolute tolerance on the total mass of a valid distribution.
inline constexpr double kMassTolerance = 1e-9;

enum class LogBase { natural, two };

inline double log_scale(LogBase base) noexcept {
  return base == LogBase::natural ? 1.0 : 1.0 / std::log(2.0);
}

/// Upper bound of jsd() in the given base.
inline double max_jsd(LogBase base = LogBase::natural) noexcept {
  return std::sqrt(std::log(2.0) * log_scale(base));
}

/**
 * Probability vector over a vocabulary, indexed by token id.
 *
 * Construction validates: entries finite and >= 0, total mass 1 within
 * kMassTolerance. Use normalized() to build from unnormalized weights.
 */
class TokenDistribution {
 public:
  TokenDistribution() = default;

  explicit TokenDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    validate();
  }
  TokenDistribution(std::initializer_list<double> probs)
      : TokenDistribution(std::vector<double>(probs)) {}

  /// Divides by the total. Throws DataError on negative or all-zero weights.
  static TokenDistribution normalized(std::vector<double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("negative or non-finite weight");
      total += w;
    }
    if (!(total > 0.0)) throw DataError("cannot normalize an all-zero weight vector");
    for (double& w : weights) w /= total;
    return TokenDistribution(std::move(weights));
  }

  static TokenDistribution uniform(std::size_t vocab_size) {
    if (vocab_size == 0) throw DataError("empty vocabulary");
    return TokenDistribution(
        std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)));
  }

  static TokenDistribution point_mass(std::size_t vocab_size, TokenId token) {
    if (token < 0 || static_cast<std::size_t>(token) >= vocab_size)
      throw DimensionError("point mass token outside vocabulary");
    std::vector<double> p(vocab_size, 0.0);
    p[static_cast<std::size_t>(token)] = 1.0;
    return TokenDistribution(std::move(p));
  }

  std::size_t vocab_size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](TokenId t) const { return probs_.at(static_cast<std::size_t>(t)); }
  bool contains(TokenId t) const noexcept {
    return t >= 0 && static_cast<std::size_t>(t) < probs_.size();
  }

  bool operator==(const TokenDistribution&) const = default;

 private:
  void validate() const {
    if (probs_.empty()) throw DataError("distribution over an empty vocabulary");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("probability entry is negative or non-finite");
      total += p;
    }
    if (std::abs(total - 1.0) > kMassTolerance)
      throw DataError("probabilities sum to " + std::to_string(total) + ", expected 1");
  }

  std::vector<double> probs_;
};

/// Sorted, duplicate-free set of token ids.
class SupportSet {
 public:
  SupportSet() = default;
  SupportSet(std::initializer_list<TokenId> ids) : SupportSet(std::vector<TokenId>(ids)) {}
  explicit SupportSet(std::vector<TokenId> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  }

  /// Tokens with strictly positive probability.
  static SupportSet of(const TokenDistribution& d) {
    SupportSet s;
    const auto p = d.probs();
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] > 0.0) s.ids_.push_back(static_cast<TokenId>(i));
    return s;
  }

  bool contains(TokenId t) const { return std::binary_search(ids_.begin(), ids_.end(), t); }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<TokenId>& ids() const noexcept { return ids_; }
  auto begin() const noexcept { return ids_.begin(); }
  auto end() const noexcept { return ids_.end(); }

  std::size_t intersection_size(const SupportSet& other) const {
    std::size_t n = 0;
    auto a = ids_.begin();
    auto b = other.ids_.begin();
    while (a != ids_.end() && b != other.ids_.end()) {
      if (*a < *b) {
        ++a;
      } else if (*b < *a) {
        ++b;
      } else {
        ++n;
        ++a;
        ++b;
      }
    }
    return n;
  }

  bool operator==(const SupportSet&) const = default;

 private:
  std::vector<TokenId> ids_;
};

namespace detail {
inline void require_same_vocab(const TokenDistribution& a, const TokenDistribution& b) {
  if (a.vocab_size() != b.vocab_size())
    throw DimensionError("incompatible vocabularies: " + std::to_string(a.vocab_size()) +
                         " vs " + std::to_string(b.vocab_size()));
}
}  // namespace detail

/// KL(p || q). Returns +infinity when p puts mass where q has none.
inline double kl(const TokenDistribution& p, const TokenDistribution& q,
                 LogBase base = LogBase::natural) {
  detail::require_same_vocab(p, q);
  const auto pp = p.probs();
  const auto qq = q.probs();
  double sum = 0.0;
  for (std::size_t t = 0; t < pp.size(); ++t) {
    if (pp[t] == 0.0) continue;
    if (qq[t] == 0.0) return std::numeric_limits<double>::infinity();
    sum += pp[t] * std::log(pp[t] / qq[t]);
  }
  return std::max(0.0, sum) * log_scale(base);
}

/**
 * Jensen-Shannon distance: sqrt(KL(p1||m)/2 + KL(p2||m)/2), m = (p1+p2)/2.
 *
 * Each per-token term is evaluated as a commutative expression of the two
 * entries, so jsd(a, b) == jsd(b, a) bit for bit.
 */
inline double jsd(const TokenDistribution& p1, const TokenDistribution& p2,
                  LogBase base = LogBase::natural) {
  detail::require_same_vocab(p1, p2);
  const auto a = p1.probs();
  const auto b = p2.probs();
  double sum = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const double x = a[t];
    const double y = b[t];
    if (x == y) continue;  // both terms vanish
    const double m = 0.5 * (x + y);
    const double tx = x > 0.0 ? x * std::log(x / m) : 0.0;
    const double ty = y > 0.0 ? y * std::log(y / m) : 0.0;
    sum += tx + ty;
  }
  // clamp absorbs rounding at the disjoint-support maximum
  return std::min(std::sqrt(std::max(0.0, 0.5 * sum * log_scale(base))), max_jsd(base));
}

/// Total variation distance, half the L1 distance.
inline double tvd(const TokenDistribution& p1, const TokenDistribution& p2) {
  detail::require_same_vocab(p1, p2);
  const auto a = p1.probs();
  const auto b = p2.probs();
  double sum = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) sum += std::abs(a[t] - b[t]);
  return std::min(1.0, 0.5 * sum);
}

/// Recall/precision of P against reference Q. Empty operands give nullopt.
struct SetMetrics {
  std::optional<double> recall;
  std::optional<double> precision;
  double f1 = 0.0;
};

inline SetMetrics set_metrics(const SupportSet& p, const SupportSet& q) {
  SetMetrics m;
  const auto common = static_cast<double>(p.intersection_size(q));
  if (!q.empty()) m.recall = common / static_cast<double>(q.size());
  if (!p.empty()) m.precision = common / static_cast<double>(p.size());
  if (m.recall && m.precision && *m.recall > 0.0 && *m.precision > 0.0)
    m.f1 = 2.0 * *m.recall * *m.precision / (*m.recall + *m.precision);
  return m;
}

}  // namespace ctxlens
