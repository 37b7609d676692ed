#pragma once

// Answer-quality metrics: token-overlap F1, sentence BLEU-4 and ROUGE-L.
//
// All three lowercase, replace ASCII punctuation with spaces and split on
// whitespace. token_f1 additionally drops the articles a/an/the (the usual
// reading-comprehension convention); BLEU and ROUGE-L keep every word.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ctxlens {

struct ScoredAnswer {
  double f1 = 0.0;
  double bleu = 0.0;
  double rouge_l = 0.0;
};

inline std::vector<std::string> words(std::string_view text, bool drop_articles = false) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    clean += std::ispunct(u) ? ' ' : static_cast<char>(std::tolower(u));
  }
  std::vector<std::string> out;
  std::istringstream is(clean);
  for (std::string w; is >> w;) {
    if (drop_articles && (w == "a" || w == "an" || w == "the")) continue;
    out.push_back(std::move(w));
  }
  return out;
}

/// Bag-of-words F1. Two empty answers agree perfectly.
inline double token_f1(std::string_view pred, std::string_view gold) {
  const auto p = words(pred, true);
  const auto g = words(gold, true);
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : g) ++counts[w];
  int overlap = 0;
  for (const auto& w : p)
    if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace detail {
inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& w, std::size_t n) {
  std::map<std::vector<std::string>, int> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[std::vector<std::string>(w.begin() + i, w.begin() + i + n)];
  return out;
}
}  // namespace detail

/**
 * Single-reference BLEU-4, uniform weights, clipped counts and brevity
 * penalty. A zero precision at n >= 2 is smoothed to (m+1)/(t+1); a zero
 * unigram precision makes the score 0.
 */
inline double bleu(std::string_view pred, std::string_view gold) {
  const auto p = words(pred);
  const auto g = words(gold);
  if (p.empty() || g.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto pc = detail::ngram_counts(p, n);
    const auto gc = detail::ngram_counts(g, n);
    int matched = 0, total = 0;
    for (const auto& [gram, c] : pc) {
      total += c;
      if (auto it = gc.find(gram); it != gc.end()) matched += std::min(c, it->second);
    }
    if (matched == 0) {
      if (n == 1) return 0.0;
      log_sum += std::log(1.0 / static_cast<double>(total + 1));
      continue;
    }
    log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  const double c = static_cast<double>(p.size());
  const double r = static_cast<double>(g.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return std::clamp(bp * std::exp(log_sum / 4.0), 0.0, 1.0);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = x == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

/// LCS F-measure with beta = 1.
inline double rouge_l(std::string_view pred, std::string_view gold) {
  const auto p = words(pred);
  const auto g = words(gold);
  if (p.empty() || g.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(p, g));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(p.size());
  const double recall = lcs / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline ScoredAnswer score_answer(std::string_view pred, std::string_view gold) {
  return {token_f1(pred, gold), bleu(pred, gold), rouge_l(pred, gold)};
}

}  // namespace ctxlens
