#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "fedaudit/errors.hpp"

// Attack evaluation metrics: ROC curve with tie grouping, trapezoid AUC, and
// accuracy / false-positive rate at a fixed residual threshold.

namespace fedaudit {

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
  double auc = 0.0;
};

struct ThresholdRates {
  double accuracy = 0.0;
  double fpr = 0.0;
};

// Threshold sweep over the pooled scores, higher score = more member-like.
// Tied scores advance as one group, which makes the trapezoid AUC equal the
// Mann-Whitney statistic with half-credit for ties.
inline RocCurve roc_and_auc(const std::vector<double>& member_scores,
                            const std::vector<double>& nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty())
    throw ValidationError("roc_and_auc needs scores from both classes");

  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  all.reserve(member_scores.size() + nonmember_scores.size());
  for (double s : member_scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite member score");
    all.push_back({s, true});
  }
  for (double s : nonmember_scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite non-member score");
    all.push_back({s, false});
  }
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });

  const double pos = static_cast<double>(member_scores.size());
  const double neg = static_cast<double>(nonmember_scores.size());

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  double auc = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      if (all[j].member) ++tp;
      else ++fp;
      ++j;
    }
    const double fpr = fp / neg;
    const double tpr = tp / pos;
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    curve.points.emplace_back(fpr, tpr);
    prev_fpr = fpr;
    prev_tpr = tpr;
    i = j;
  }
  curve.auc = auc;
  return curve;
}

// Accuracy and FPR for the residual decision rule: member iff residual < tau.
inline ThresholdRates acc_fpr_at_threshold(const std::vector<double>& member_residuals,
                                           const std::vector<double>& nonmember_residuals,
                                           double tau) {
  if (tau <= 0.0) throw ValidationError("threshold must be positive");
  if (member_residuals.empty() || nonmember_residuals.empty())
    throw ValidationError("acc_fpr_at_threshold needs residuals from both classes");
  std::size_t tp = 0, fp = 0;
  for (double r : member_residuals)
    if (r < tau) ++tp;
  for (double r : nonmember_residuals)
    if (r < tau) ++fp;
  const double p = static_cast<double>(member_residuals.size());
  const double n = static_cast<double>(nonmember_residuals.size());
  ThresholdRates out;
  out.accuracy = (static_cast<double>(tp) + (n - static_cast<double>(fp))) / (p + n);
  out.fpr = static_cast<double>(fp) / n;
  return out;
}

}  // namespace fedaudit
