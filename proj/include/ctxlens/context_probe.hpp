#pragma once

/**
 * Minimal context length searches.
 *
 * mcl():   shortest grid prefix whose greedy prediction is the true next
 *          token with a top-1/top-2 probability gap of at least delta.
 * damcl(): shortest grid prefix whose decoded distribution is within
 *          epsilon of the decoded full-context distribution under a metric.
 *
 * Both scan the grid in ascending order and stop at the first prefix that
 * passes; the grid always ends at |s|. Every evaluated point is kept in the
 * trace, so non-monotone metric curves stay visible.
 */

#include "ctxlens/decoding.hpp"
#include "ctxlens/distribution.hpp"
#include "ctxlens/error.hpp"
#include "ctxlens/histogram.hpp"
#include "ctxlens/oracle.hpp"
#include "ctxlens/power_law.hpp"
#include "ctxlens/sample.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ctxlens {

inline constexpr double kDefaultDelta = 0.2;

struct PrefixGrid {
  enum class Mode { fixed_step, percentile, fixed_50 };

  Mode mode = Mode::fixed_step;
  std::size_t start = 32;
  std::size_t step = 16;
  std::vector<double> percentiles{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  /// 32, 48, 64, ... for documents up to ~1k tokens.
  static PrefixGrid short_docs() { return {}; }
  /// 32, 96, 160, ... for 6-7k token documents.
  static PrefixGrid long_docs() {
    PrefixGrid g;
    g.step = 64;
    return g;
  }
  /// Last 10%, 20%, ..., 100% of the sequence.
  static PrefixGrid percentile() {
    PrefixGrid g;
    g.mode = Mode::percentile;
    return g;
  }
  /// 50, 100, 150, ...
  static PrefixGrid fixed_50() {
    PrefixGrid g;
    g.mode = Mode::fixed_50;
    g.start = 50;
    g.step = 50;
    return g;
  }

  void validate() const {
    if (start < 1) throw ConfigError("grid start must be >= 1");
    if (step < 1) throw ConfigError("grid step must be >= 1");
    if (mode == Mode::percentile) {
      if (percentiles.empty() || percentiles.back() != 1.0)
        throw ConfigError("percentile grid must end at 1.0");
      for (std::size_t i = 0; i < percentiles.size(); ++i) {
        if (!(percentiles[i] > 0.0)) throw ConfigError("percentiles must be positive");
        if (i > 0 && !(percentiles[i] > percentiles[i - 1]))
          throw ConfigError("percentiles must be strictly increasing");
      }
    }
  }

  /// Strictly increasing prefix lengths for a sequence of length n; last is n.
  std::vector<std::size_t> points(std::size_t n) const {
    validate();
    std::vector<std::size_t> out;
    if (n == 0) return out;
    if (mode == Mode::percentile) {
      for (double p : percentiles) {
        // tolerance absorbs products like 0.3 * 1000 = 300.00000000000006
        auto ell = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
        ell = std::clamp<std::size_t>(ell, 1, n);
        if (out.empty() || ell > out.back()) out.push_back(ell);
      }
    } else {
      const std::size_t first = mode == Mode::fixed_50 ? 50 : start;
      const std::size_t inc = mode == Mode::fixed_50 ? 50 : step;
      for (std::size_t ell = first; ell < n; ell += inc) out.push_back(ell);
    }
    if (out.empty() || out.back() != n) out.push_back(n);
    return out;
  }

  std::size_t first_point() const { return mode == Mode::fixed_50 ? 50 : start; }

  /// "fixed:32:16", "percentile", "percentile:0.25,0.5,1" or "fixed50".
  std::string to_string() const {
    std::ostringstream os;
    switch (mode) {
      case Mode::fixed_step: os << "fixed:" << start << ':' << step; break;
      case Mode::fixed_50: os << "fixed50"; break;
      case Mode::percentile:
        os << "percentile";
        if (percentiles != percentile().percentiles) {
          os << ':';
          for (std::size_t i = 0; i < percentiles.size(); ++i) os << (i ? "," : "") << percentiles[i];
        }
        break;
    }
    return os.str();
  }

  static PrefixGrid parse(std::string_view text) {
    auto bad = [&] { return ConfigError("bad grid '" + std::string(text) + "'"); };
    PrefixGrid g;
    try {
      if (text == "short") return short_docs();
      if (text == "long") return long_docs();
      if (text == "fixed50") return fixed_50();
      if (text == "percentile") return percentile();
      if (text.starts_with("percentile:")) {
        g.mode = Mode::percentile;
        g.percentiles.clear();
        std::string rest(text.substr(11));
        std::stringstream ss(rest);
        std::string item;
        while (std::getline(ss, item, ',')) g.percentiles.push_back(std::stod(item));
      } else if (text.starts_with("fixed:")) {
        std::string rest(text.substr(6));
        const auto colon = rest.find(':');
        if (colon == std::string::npos) throw bad();
        g.start = std::stoul(rest.substr(0, colon));
        g.step = std::stoul(rest.substr(colon + 1));
      } else {
        throw bad();
      }
    } catch (const std::logic_error&) {
      throw bad();
    }
    g.validate();
    return g;
  }

  bool operator==(const PrefixGrid&) const = default;
};

struct TraceEntry {
  std::size_t ell = 0;
  /// Confidence gap (mcl) or metric value (damcl).
  double value = 0.0;
  /// Greedy prediction at this prefix (mcl only).
  std::optional<TokenId> top1;

  bool operator==(const TraceEntry&) const = default;
};

struct ProbeResult {
  std::optional<std::size_t> resolved_length;
  std::vector<TraceEntry> trace;
  PrefixGrid grid;
  /// delta for mcl, epsilon for damcl.
  double threshold = 0.0;

  bool resolved() const noexcept { return resolved_length.has_value(); }
  bool operator==(const ProbeResult&) const = default;
};

/// A backend failure in the middle of a grid scan; carries what was scanned.
class ProbeError : public Error {
 public:
  ProbeError(const Error& cause, ProbeResult partial)
      : Error(cause.code(), cause.what()), partial_(std::move(partial)) {}
  const ProbeResult& partial() const noexcept { return partial_; }

 private:
  ProbeResult partial_;
};

/// Greedy prediction equals t and the top-1/top-2 gap is at least delta.
inline bool correct_and_confident(const TokenDistribution& d, TokenId t, double delta) {
  return top1(d) == t && confidence(d) >= delta;
}

inline ProbeResult mcl(std::span<const TokenId> s, TokenId t, double delta, const PrefixGrid& grid,
                       const Backend& backend, Truncation mode = Truncation::suffix) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
  if (s.size() < grid.first_point())
    throw DataError("sequence of " + std::to_string(s.size()) + " tokens is shorter than the grid start");
  if (t < 0 || static_cast<std::size_t>(t) >= backend.vocab_size())
    throw RequestError("target token outside vocabulary");

  ProbeResult out;
  out.grid = grid;
  out.threshold = delta;
  for (std::size_t ell : grid.points(s.size())) {
    try {
      const auto d = prefix_distribution(s, ell, backend, mode);
      out.trace.push_back({ell, confidence(d), top1(d)});
      if (correct_and_confident(d, t, delta)) {
        out.resolved_length = ell;
        break;
      }
    } catch (const ProbeError&) {
      throw;
    } catch (const Error& e) {
      throw ProbeError(e, out);
    }
  }
  return out;
}

enum class Metric { jsd, tvd, kl, one_minus_f1 };

inline const char* to_string(Metric m) noexcept {
  switch (m) {
    case Metric::jsd: return "jsd";
    case Metric::tvd: return "tvd";
    case Metric::kl: return "kl";
    case Metric::one_minus_f1: return "one_minus_f1";
  }
  return "?";
}

inline Metric parse_metric(std::string_view name) {
  for (Metric m : {Metric::jsd, Metric::tvd, Metric::kl, Metric::one_minus_f1})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

/// M(candidate; reference). KL is taken as KL(candidate || reference).
inline double distance(Metric m, const TokenDistribution& candidate, const TokenDistribution& reference) {
  switch (m) {
    case Metric::jsd: return jsd(candidate, reference);
    case Metric::tvd: return tvd(candidate, reference);
    case Metric::kl: return kl(candidate, reference);
    case Metric::one_minus_f1:
      return 1.0 - set_metrics(SupportSet::of(candidate), SupportSet::of(reference)).f1;
  }
  return 0.0;
}

inline ProbeResult damcl(std::span<const TokenId> s, const DecodingStrategy& strategy, Metric metric,
                         double epsilon, const PrefixGrid& grid, const Backend& backend,
                         Truncation mode = Truncation::suffix) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (s.empty()) throw DataError("empty sequence");

  ProbeResult out;
  out.grid = grid;
  out.threshold = epsilon;
  try {
    const auto reference = apply_strategy(full_distribution(s, backend), strategy);
    for (std::size_t ell : grid.points(s.size())) {
      // the full-length point is the reference itself: distance exactly 0
      const double value =
          ell == s.size()
              ? 0.0
              : distance(metric, apply_strategy(prefix_distribution(s, ell, backend, mode), strategy),
                         reference);
      out.trace.push_back({ell, value, std::nullopt});
      if (value <= epsilon) {
        out.resolved_length = ell;
        break;
      }
    }
  } catch (const Error& e) {
    throw ProbeError(e, out);
  }
  return out;
}

struct FilterOutcome {
  std::vector<SequenceSample> kept;
  /// seq_id and reason for samples that could not be evaluated.
  std::vector<std::pair<std::string, std::string>> rejected;
};

/// Keeps samples whose full-context greedy prediction is the true next token with gap >= delta.
inline FilterOutcome filter_confident_correct(const std::vector<SequenceSample>& samples, double delta,
                                              const Backend& backend) {
  FilterOutcome out;
  for (const auto& s : samples) {
    if (!s.next_token) {
      out.rejected.emplace_back(s.seq_id, "no ground-truth next token");
      continue;
    }
    if (s.tokens.empty()) {
      out.rejected.emplace_back(s.seq_id, "empty sequence");
      continue;
    }
    if (correct_and_confident(full_distribution(s.tokens, backend), *s.next_token, delta))
      out.kept.push_back(s);
  }
  return out;
}

struct MclHistogram {
  Histogram histogram;
  /// Absent when fewer than two grid points are populated.
  std::optional<PowerLawFit> fit;
};

inline MclHistogram mcl_histogram(std::span<const ProbeResult> results) {
  if (results.empty()) throw DataError("no probe results to histogram");
  MclHistogram out;
  for (const auto& r : results) {
    if (!r.resolved_length) throw DataError("histogram input contains an unresolved probe");
    out.histogram.add(*r.resolved_length);
  }
  std::vector<Point> pts;
  for (auto [ell, count] : out.histogram.bins())
    pts.push_back({static_cast<double>(ell), static_cast<double>(count)});
  try {
    out.fit = fit_power_law(pts);
  } catch (const InsufficientDataError&) {
    out.fit.reset();
  }
  return out;
}

}  // namespace ctxlens
