#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedaudit/errors.hpp"
#include "fedaudit/linalg.hpp"
#include "fedaudit/matrix.hpp"
#include "fedaudit/metrics.hpp"
#include "fedaudit/parallel.hpp"
#include "fedaudit/rng.hpp"

// Capability-boundary checks for the gradient-span attack: members of a batch
// of p token rows are exactly recoverable from an n x m down-weight gradient
// iff p <= min(n - 1, m). The scan measures the boundary directly on raw
// gradient-shaped products, outside any training loop.

namespace fedaudit {

enum class Regime { Recoverable, FullRankDegenerate, CapacityLimited };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Recoverable: return "recoverable";
    case Regime::FullRankDegenerate: return "full_rank_degenerate";
    case Regime::CapacityLimited: return "capacity_limited";
  }
  throw ValidationError("unknown regime");
}

inline Regime classify_regime(std::size_t n, std::size_t m, std::size_t p) {
  if (n < 1 || m < 1 || p < 1)
    throw ValidationError("dimensions must be at least 1");
  if (p <= std::min(n - 1, m)) return Regime::Recoverable;
  return m >= n ? Regime::FullRankDegenerate : Regime::CapacityLimited;
}

struct BoundaryPoint {
  std::size_t p = 0;
  double mean_member_residual = 0.0;
  double max_member_residual = 0.0;
  double min_nonmember_residual = 0.0;
  double auc = 0.0;
};

// For each p: `trials` independent draws of a batch X (p x n) and sensitivity
// alpha (p x m); the span comes from grad = X^T alpha, the member candidate is
// a batch row, the non-member a fresh generic row.
inline std::vector<BoundaryPoint> empirical_boundary_scan(
    std::size_t n, std::size_t m, const std::vector<std::size_t>& p_values,
    std::size_t trials, std::uint64_t seed) {
  if (n < 2 || m < 1) throw ValidationError("scan needs n >= 2 and m >= 1");
  if (p_values.empty()) throw ValidationError("empty p range");
  if (trials < 1) throw ValidationError("need at least one trial");
  for (std::size_t p : p_values)
    if (p < 1) throw ValidationError("p values must be at least 1");

  std::vector<BoundaryPoint> points(p_values.size());
  std::vector<std::vector<double>> member(p_values.size()),
      nonmember(p_values.size());
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    member[i].resize(trials);
    nonmember[i].resize(trials);
  }

  parallel_for(p_values.size() * trials, [&](std::size_t item) {
    const std::size_t i = item / trials;
    const std::size_t trial = item % trials;
    const std::size_t p = p_values[i];
    std::mt19937_64 rng(mix_seed(seed, p, trial));
    Matrix x = gaussian_matrix(p, n, rng);
    Matrix alpha = gaussian_matrix(p, m, rng);
    Vector fresh = gaussian_vector(n, rng);
    Subspace span = make_subspace(transposed_matmul(x, alpha));

    auto residual = [&](std::span<const double> v) {
      Vector rec = project_onto(span, v);
      double r = 0.0;
      for (std::size_t j = 0; j < rec.size(); ++j) r += std::abs(v[j] - rec[j]);
      return r;
    };
    member[i][trial] = residual(x.row(0));
    nonmember[i][trial] = residual(fresh);
  });

  for (std::size_t i = 0; i < p_values.size(); ++i) {
    BoundaryPoint& pt = points[i];
    pt.p = p_values[i];
    pt.max_member_residual = 0.0;
    pt.min_nonmember_residual = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      sum += member[i][t];
      pt.max_member_residual = std::max(pt.max_member_residual, member[i][t]);
      pt.min_nonmember_residual =
          std::min(pt.min_nonmember_residual, nonmember[i][t]);
    }
    pt.mean_member_residual = sum / static_cast<double>(trials);
    std::vector<double> mscore(member[i]), nscore(nonmember[i]);
    for (double& s : mscore) s = -s;
    for (double& s : nscore) s = -s;
    pt.auc = roc_and_auc(mscore, nscore).auc;
  }
  return points;
}

// Largest scanned p whose members are all recovered (residual below tol) while
// non-members remain separated; zero if no scanned p qualifies. At p = n with
// m >= n the span degenerates to the full space and both conditions conflate,
// which is why the non-member floor participates.
inline std::size_t empirical_p_max(const std::vector<BoundaryPoint>& points,
                                   double member_tol = 1e-8,
                                   double nonmember_floor = 1e-3) {
  std::size_t best = 0;
  for (const auto& pt : points)
    if (pt.max_member_residual < member_tol &&
        pt.min_nonmember_residual > nonmember_floor)
      best = std::max(best, pt.p);
  return best;
}

}  // namespace fedaudit
