#pragma once

// Threshold-free and threshold-picking evaluation of a detection score
// against reference labels. "long" is the positive class; a score at or
// above the threshold predicts long.

#include "ctxlens/error.hpp"
#include "ctxlens/sample.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace ctxlens {

struct LabeledScore {
  double score = 0.0;
  ContextClass label = ContextClass::short_context;
};

namespace detail {
inline void require_both_classes(std::span<const LabeledScore> scores) {
  bool pos = false, neg = false;
  for (const auto& s : scores) (s.label == ContextClass::long_context ? pos : neg) = true;
  if (!pos || !neg) throw DataError("evaluation needs both long and short labels");
}
}  // namespace detail

/// Probability that a random long sample outscores a random short one; ties count 1/2.
inline double roc_auc(std::span<const LabeledScore> scores) {
  detail::require_both_classes(scores);
  std::vector<LabeledScore> v(scores.begin(), scores.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score < b.score; });

  double rank_sum = 0.0;  // 1-based mid-ranks of the positives
  std::size_t positives = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (v[k].label == ContextClass::long_context) {
        rank_sum += mid_rank;
        ++positives;
      }
    i = j;
  }
  const auto np = static_cast<double>(positives);
  const auto nn = static_cast<double>(v.size() - positives);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct YoudenResult {
  double theta = 0.0;
  double j = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

/**
 * Threshold maximizing TPR - FPR.
 *
 * Candidates are -inf, the midpoints between adjacent distinct scores, and
 * +inf, which covers every achievable (TPR, FPR) pair. Ties go to the
 * smallest threshold.
 */
inline YoudenResult youden_threshold(std::span<const LabeledScore> scores) {
  detail::require_both_classes(scores);
  std::vector<LabeledScore> v(scores.begin(), scores.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score < b.score; });

  std::size_t pos_total = 0;
  for (const auto& s : v) pos_total += s.label == ContextClass::long_context;
  const auto P = static_cast<double>(pos_total);
  const auto N = static_cast<double>(v.size() - pos_total);

  // theta = -inf: everything predicted long
  std::size_t tp = pos_total, fp = v.size() - pos_total;
  YoudenResult best{-std::numeric_limits<double>::infinity(), 0.0, 1.0, 1.0};
  best.j = best.tpr - best.fpr;

  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].label == ContextClass::long_context ? tp : fp) -= 1;
      ++j;
    }
    const double theta = j < v.size() ? 0.5 * (v[i].score + v[j].score)
                                       : std::numeric_limits<double>::infinity();
    const double tpr = static_cast<double>(tp) / P;
    const double fpr = static_cast<double>(fp) / N;
    if (tpr - fpr > best.j) best = {theta, tpr - fpr, tpr, fpr};
    i = j;
  }
  return best;
}

}  // namespace ctxlens
