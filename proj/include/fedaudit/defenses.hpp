#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "fedaudit/errors.hpp"
#include "fedaudit/matrix.hpp"
#include "fedaudit/rng.hpp"

// Client-side gradient perturbation applied before upload: Gaussian-noise
// differential privacy with per-module clipping, and top-magnitude pruning.

namespace fedaudit {

using ModuleGradients = std::map<std::string, Matrix>;

enum class DefenseKind { None, DP, GP };

struct DefenseConfig {
  DefenseKind kind = DefenseKind::None;
  double sigma = 0.0;      // DP noise standard deviation per entry
  double clip = 1.0;       // DP Frobenius clipping bound per module
  double beta = 0.0;       // GP fraction of entries pruned, in [0, 1)
  std::uint64_t noise_seed = 0;

  void validate() const {
    if (kind == DefenseKind::DP) {
      if (sigma < 0.0) throw ValidationError("dp sigma must be non-negative");
      if (clip <= 0.0) throw ValidationError("dp clip must be positive");
    }
    if (kind == DefenseKind::GP) {
      if (beta < 0.0 || beta >= 1.0) throw ValidationError("gp beta must be in [0, 1)");
    }
  }
};

// Scale each module gradient by min(1, clip/||g||_F), then add i.i.d. Gaussian
// noise of standard deviation sigma per entry.
inline ModuleGradients dp_transform(const ModuleGradients& grads, double sigma,
                                    double clip, std::uint64_t seed) {
  if (sigma < 0.0) throw ValidationError("dp sigma must be non-negative");
  if (clip <= 0.0) throw ValidationError("dp clip must be positive");
  ModuleGradients out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const auto& [name, g] : grads) {
    Matrix m = g;
    const double norm = m.frobenius_norm();
    if (norm > clip) m *= clip / norm;
    if (sigma > 0.0) {
      for (double& x : m.flat()) x += sigma * noise(rng);
    }
    out.emplace(name, std::move(m));
  }
  return out;
}

// Keep the ceil((1 - beta) * count) entries of largest magnitude per module,
// zeroing the rest. Magnitude ties survive in ascending flat-index order.
inline ModuleGradients gp_transform(const ModuleGradients& grads, double beta) {
  if (beta < 0.0 || beta >= 1.0) throw ValidationError("gp beta must be in [0, 1)");
  ModuleGradients out;
  for (const auto& [name, g] : grads) {
    const std::size_t count = g.rows() * g.cols();
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil((1.0 - beta) * static_cast<double>(count)));
    Matrix m(g.rows(), g.cols());
    if (keep > 0 && count > 0) {
      std::vector<std::size_t> order(count);
      std::iota(order.begin(), order.end(), 0);
      auto flat = g.flat();
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(flat[a]) > std::abs(flat[b]);
      });
      auto out_flat = m.flat();
      for (std::size_t i = 0; i < keep; ++i) out_flat[order[i]] = flat[order[i]];
    }
    out.emplace(name, std::move(m));
  }
  return out;
}

inline ModuleGradients apply_defense(const ModuleGradients& grads,
                                     const DefenseConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case DefenseKind::None:
      return grads;
    case DefenseKind::DP:
      return dp_transform(grads, cfg.sigma, cfg.clip, seed);
    case DefenseKind::GP:
      return gp_transform(grads, cfg.beta);
  }
  throw ValidationError("unknown defense kind");
}

}  // namespace fedaudit
