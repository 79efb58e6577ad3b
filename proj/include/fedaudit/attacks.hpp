#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fedaudit/dataset.hpp"
#include "fedaudit/errors.hpp"
#include "fedaudit/federation.hpp"
#include "fedaudit/linalg.hpp"
#include "fedaudit/model.hpp"

// Membership-inference scorers over a training trace. Every scorer consumes
// only what an honest-but-curious server holds: global parameters and the
// post-defense uploads. Higher score always means more member-like, so the
// subspace attack reports the negated residual.

namespace fedaudit {

enum class AttackKind {
  ProjRes,
  FedLoss,
  ScoreDiff,
  ScoreRatio,
  Cosine,
  GradientDiff,
  FTA,
  FedMIA,
};

inline std::string attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::ProjRes: return "projres";
    case AttackKind::FedLoss: return "fedloss";
    case AttackKind::ScoreDiff: return "score_diff";
    case AttackKind::ScoreRatio: return "score_ratio";
    case AttackKind::Cosine: return "cosine";
    case AttackKind::GradientDiff: return "gradient_diff";
    case AttackKind::FTA: return "fta";
    case AttackKind::FedMIA: return "fedmia";
  }
  throw ValidationError("unknown attack kind");
}

inline AttackKind attack_kind_from_name(const std::string& name) {
  for (AttackKind kind :
       {AttackKind::ProjRes, AttackKind::FedLoss, AttackKind::ScoreDiff,
        AttackKind::ScoreRatio, AttackKind::Cosine, AttackKind::GradientDiff,
        AttackKind::FTA, AttackKind::FedMIA}) {
    if (attack_name(kind) == name) return kind;
  }
  throw ValidationError("unknown attack name: " + name);
}

struct AttackSpec {
  AttackKind kind = AttackKind::ProjRes;
  std::size_t fta_window = 5;
  double rank_tol = kDefaultRankTol;
  std::vector<std::string> target_modules;  // empty = every non-head module
};

struct ProjResOutcome {
  double residual = 0.0;
  bool degenerate = false;  // some attacked span had rank zero
};

// Mean over the candidate's per-token rows of the l1 distance to the span of
// the uploaded down-weight gradient; minimum across attacked modules. A rank
// zero span projects everything to zero, leaving the raw l1 norm.
inline ProjResOutcome projres_residual(const Model& model_at_round,
                                       const GradientUpdate& update,
                                       const std::vector<std::string>& module_ids,
                                       const TokenSeq& tokens, double rank_tol) {
  if (module_ids.empty()) throw ValidationError("no modules to attack");
  ProjResOutcome out;
  out.residual = std::numeric_limits<double>::infinity();
  for (const std::string& id : module_ids) {
    auto it = update.per_module.find(id);
    if (it == update.per_module.end())
      throw ValidationError("upload is missing module " + id);
    Subspace span = make_subspace(it->second, rank_tol);
    HiddenBatch hb = forward_hidden_for(model_at_round, {tokens}, id);
    double total = 0.0;
    for (std::size_t row = 0; row < hb.embeddings.rows(); ++row) {
      Vector rec = project_onto(span, hb.embeddings.row(row));
      double r = 0.0;
      for (std::size_t j = 0; j < rec.size(); ++j)
        r += std::abs(hb.embeddings(row, j) - rec[j]);
      total += r;
    }
    if (span.rank == 0) out.degenerate = true;
    out.residual = std::min(out.residual,
                            total / static_cast<double>(hb.embeddings.rows()));
  }
  return out;
}

inline bool projres_decide(double residual, double tau) {
  if (residual < 0.0) throw ValidationError("residual must be non-negative");
  if (tau <= 0.0) throw ValidationError("threshold must be positive");
  return residual < tau;
}

struct AttackVerdict {
  double score = 0.0;
  double residual = 0.0;
  bool decision = false;
  double threshold = 0.0;
};

namespace detail {

inline Vector flatten_gradients(const ModuleGradients& grads) {
  Vector flat;
  std::size_t total = 0;
  for (const auto& [name, g] : grads) total += g.rows() * g.cols();
  flat.reserve(total);
  for (const auto& [name, g] : grads)
    flat.insert(flat.end(), g.flat().begin(), g.flat().end());
  return flat;
}

inline Model model_at(const Model& architecture, const TrainingTrace& trace,
                      std::size_t round) {
  Model m = architecture;
  set_trainable_parameters(m, trace.round(round).params);
  return m;
}

}  // namespace detail

// One attack bound to a (trace, round, target client) cell. Instances touch
// only round parameters and uploads; ground-truth batch ids stay with the
// evaluation harness.
class AttackScorer {
 public:
  AttackScorer(const AttackSpec& spec, const Model& architecture,
               const Dataset& dataset, const TrainingTrace& trace,
               std::size_t round, std::size_t target_client)
      : spec_(spec), dataset_(dataset), trace_(trace), round_(round),
        target_client_(target_client) {
    const RoundRecord& rec = trace.round(round);
    if (target_client >= rec.updates.size())
      throw ValidationError("target client outside this round");
    model_ = detail::model_at(architecture, trace, round);

    switch (spec_.kind) {
      case AttackKind::ProjRes: {
        modules_ = spec_.target_modules;
        if (modules_.empty())
          for (const auto& mod : model_.modules) modules_.push_back(mod.spec.id);
        break;
      }
      case AttackKind::ScoreDiff:
      case AttackKind::ScoreRatio: {
        if (round == 0)
          throw NeedsHistoryError("previous-round parameters unavailable at round 0");
        prev_model_ = detail::model_at(architecture, trace, round - 1);
        break;
      }
      case AttackKind::FTA: {
        if (spec_.fta_window < 2)
          throw NeedsHistoryError("loss-slope window needs at least two rounds");
        const std::size_t have = std::min(spec_.fta_window, round + 1);
        if (have < 2)
          throw NeedsHistoryError("loss-slope window needs at least two rounds");
        for (std::size_t t = round + 1 - have; t <= round; ++t)
          window_models_.push_back(detail::model_at(architecture, trace, t));
        break;
      }
      case AttackKind::FedMIA: {
        if (rec.updates.size() < 3)
          throw InsufficientPopulationError(
              "reference population needs at least three clients");
        [[fallthrough]];
      }
      case AttackKind::Cosine:
      case AttackKind::GradientDiff: {
        for (const auto& update : rec.updates)
          client_flat_.push_back(detail::flatten_gradients(update.per_module));
        break;
      }
      case AttackKind::FedLoss:
        break;
    }
  }

  AttackKind kind() const { return spec_.kind; }
  std::size_t degenerate_count() const { return degenerate_count_; }

  // Higher = more member-like.
  double score(std::size_t sample_id) const {
    const TokenSeq& tokens = dataset_.tokens.at(sample_id);
    const std::size_t label = dataset_.labels.at(sample_id);
    switch (spec_.kind) {
      case AttackKind::ProjRes:
        return -residual(sample_id);
      case AttackKind::FedLoss:
        return -sample_loss(model_, tokens, label);
      case AttackKind::ScoreDiff:
        return sample_loss(prev_model_, tokens, label) -
               sample_loss(model_, tokens, label);
      case AttackKind::ScoreRatio:
        return sample_loss(prev_model_, tokens, label) /
               std::max(sample_loss(model_, tokens, label), 1e-12);
      case AttackKind::Cosine:
        return cosine_similarity(client_flat_[target_client_],
                                 candidate_gradient(tokens, label));
      case AttackKind::GradientDiff: {
        Vector g = candidate_gradient(tokens, label);
        const Vector& c = client_flat_[target_client_];
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = c[i] - g[i];
          s += d * d;
        }
        return -std::sqrt(s);
      }
      case AttackKind::FTA: {
        const auto w = static_cast<double>(window_models_.size());
        const double tbar = (w - 1.0) / 2.0;
        double lbar = 0.0;
        std::vector<double> losses(window_models_.size());
        for (std::size_t i = 0; i < window_models_.size(); ++i) {
          losses[i] = sample_loss(window_models_[i], tokens, label);
          lbar += losses[i];
        }
        lbar /= w;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < losses.size(); ++i) {
          const double dt = static_cast<double>(i) - tbar;
          num += dt * (losses[i] - lbar);
          den += dt * dt;
        }
        return -(num / den);
      }
      case AttackKind::FedMIA: {
        Vector g = candidate_gradient(tokens, label);
        std::vector<double> sims(client_flat_.size());
        for (std::size_t k = 0; k < client_flat_.size(); ++k)
          sims[k] = cosine_similarity(client_flat_[k], g);
        double mean = 0.0;
        for (std::size_t k = 0; k < sims.size(); ++k)
          if (k != target_client_) mean += sims[k];
        mean /= static_cast<double>(sims.size() - 1);
        double var = 0.0;
        for (std::size_t k = 0; k < sims.size(); ++k)
          if (k != target_client_) {
            const double d = sims[k] - mean;
            var += d * d;
          }
        var /= static_cast<double>(sims.size() - 2);
        const double sd = std::sqrt(var);
        // Similarities live in [-1, 1]; spread at roundoff scale means the
        // reference population carries no signal.
        if (sd <= 1e-12) {
          ++degenerate_count_;
          return 0.0;
        }
        return (sims[target_client_] - mean) / sd;
      }
    }
    throw ValidationError("unknown attack kind");
  }

  // Raw subspace residual, defined for the subspace attack only.
  double residual(std::size_t sample_id) const {
    if (spec_.kind != AttackKind::ProjRes)
      throw ValidationError("residuals are defined for the subspace attack only");
    ProjResOutcome out = projres_residual(
        model_, trace_.round(round_).updates[target_client_], modules_,
        dataset_.tokens.at(sample_id), spec_.rank_tol);
    if (out.degenerate) ++degenerate_count_;
    return out.residual;
  }

  AttackVerdict verdict(std::size_t sample_id, double tau) const {
    AttackVerdict v;
    v.residual = residual(sample_id);
    v.score = -v.residual;
    v.threshold = tau;
    v.decision = projres_decide(v.residual, tau);
    return v;
  }

 private:
  Vector candidate_gradient(const TokenSeq& tokens, std::size_t label) const {
    return detail::flatten_gradients(
        loss_and_gradients(model_, {tokens}, {label}).gradients);
  }

  AttackSpec spec_;
  const Dataset& dataset_;
  const TrainingTrace& trace_;
  std::size_t round_;
  std::size_t target_client_;
  Model model_;
  Model prev_model_;
  std::vector<Model> window_models_;
  std::vector<std::string> modules_;
  std::vector<Vector> client_flat_;
  mutable std::size_t degenerate_count_ = 0;
};

struct EvaluationScores {
  std::vector<double> member_scores;
  std::vector<double> nonmember_scores;
};

inline EvaluationScores evaluate_attack(const AttackScorer& scorer,
                                        const std::vector<std::size_t>& member_ids,
                                        const std::vector<std::size_t>& nonmember_ids) {
  if (member_ids.empty() || nonmember_ids.empty())
    throw ValidationError("evaluation needs ids from both classes");
  EvaluationScores out;
  out.member_scores.reserve(member_ids.size());
  out.nonmember_scores.reserve(nonmember_ids.size());
  for (std::size_t id : member_ids) out.member_scores.push_back(scorer.score(id));
  for (std::size_t id : nonmember_ids)
    out.nonmember_scores.push_back(scorer.score(id));
  return out;
}

}  // namespace fedaudit
