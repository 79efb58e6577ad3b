#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "fedaudit/attacks.hpp"
#include "fedaudit/config.hpp"
#include "fedaudit/dataset.hpp"
#include "fedaudit/federation.hpp"
#include "fedaudit/io.hpp"
#include "fedaudit/metrics.hpp"
#include "fedaudit/model.hpp"
#include "fedaudit/theory.hpp"

// Experiment orchestration: trains one federation per defense, evaluates the
// attack grid at the requested rounds, and writes the result files. All
// outputs except the manifest timestamp are deterministic in the config.

namespace fedaudit {

inline constexpr const char* kArtifactVersion = "1.0.0";

inline std::string defense_tag(const DefenseConfig& d) {
  switch (d.kind) {
    case DefenseKind::None: return "none";
    case DefenseKind::DP: return "dp_sigma" + format_double(d.sigma);
    case DefenseKind::GP: return "gp_beta" + format_double(d.beta);
  }
  throw ValidationError("unknown defense kind");
}

// Hash of the science only: where the outputs land does not change them.
inline std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig canonical = cfg;
  canonical.output_dir = "out";
  canonical.export_trace = false;
  const std::uint64_t h = fnv1a_hash(serialize_experiment_config(canonical));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// One audit repetition: the target client and the pair of candidate samples.
struct EvaluationDraw {
  std::size_t repetition = 0;
  std::size_t target_client = 0;
  std::size_t member_id = 0;
  std::size_t nonmember_id = 0;
};

// Repetition r targets client r mod K; the member comes from that client's
// batch at the attacked round, the non-member from the held-out pool.
inline std::vector<EvaluationDraw> draw_evaluation_pairs(
    const RoundRecord& rec, const Dataset& dataset,
    const EvaluationConfig& eval) {
  const std::size_t num_clients = rec.batch_ids.size();
  if (num_clients == 0) throw ValidationError("round has no client batches");
  if (dataset.heldout_ids.size() < eval.repetitions)
    throw ValidationError("held-out pool smaller than evaluation repetitions");

  std::vector<std::size_t> pool = dataset.heldout_ids;
  std::mt19937_64 pool_rng(mix_seed(eval.seed, rec.round));
  std::shuffle(pool.begin(), pool.end(), pool_rng);

  std::vector<EvaluationDraw> draws;
  draws.reserve(eval.repetitions);
  for (std::size_t r = 0; r < eval.repetitions; ++r) {
    EvaluationDraw d;
    d.repetition = r;
    d.target_client = r % num_clients;
    const auto& batch = rec.batch_ids[d.target_client];
    if (batch.empty()) throw ValidationError("target client batch is empty");
    std::mt19937_64 rng(mix_seed(eval.seed, rec.round, r));
    d.member_id = batch[std::uniform_int_distribution<std::size_t>(
        0, batch.size() - 1)(rng)];
    d.nonmember_id = pool[r];
    draws.push_back(d);
  }
  return draws;
}

// Everything measured for one attack at one round under one defense.
struct CellResult {
  AttackSpec spec;
  std::size_t round = 0;
  std::string tag;  // defense tag of the trace this ran against
  std::vector<EvaluationDraw> draws;
  std::vector<double> member_scores;
  std::vector<double> nonmember_scores;
  std::vector<double> member_residuals;     // ProjRes only
  std::vector<double> nonmember_residuals;  // ProjRes only
  RocCurve roc;
  ThresholdRates rates;  // ProjRes only, at tau
  std::size_t degenerate_count = 0;

  bool has_residuals() const { return spec.kind == AttackKind::ProjRes; }
};

inline CellResult evaluate_cell(const AttackSpec& spec, const Model& architecture,
                                const Dataset& dataset, const TrainingTrace& trace,
                                std::size_t round, double tau,
                                const std::vector<EvaluationDraw>& draws,
                                const std::string& tag) {
  CellResult cell;
  cell.spec = spec;
  cell.round = round;
  cell.tag = tag;
  cell.draws = draws;

  std::map<std::size_t, AttackScorer> scorers;  // keyed by target client
  for (const auto& d : draws) {
    auto it = scorers.find(d.target_client);
    if (it == scorers.end())
      it = scorers
               .emplace(std::piecewise_construct,
                        std::forward_as_tuple(d.target_client),
                        std::forward_as_tuple(spec, architecture, dataset,
                                              trace, round, d.target_client))
               .first;
    const AttackScorer& scorer = it->second;
    cell.member_scores.push_back(scorer.score(d.member_id));
    cell.nonmember_scores.push_back(scorer.score(d.nonmember_id));
    if (spec.kind == AttackKind::ProjRes) {
      cell.member_residuals.push_back(scorer.residual(d.member_id));
      cell.nonmember_residuals.push_back(scorer.residual(d.nonmember_id));
    }
  }
  for (const auto& [client, scorer] : scorers)
    cell.degenerate_count += scorer.degenerate_count();

  cell.roc = roc_and_auc(cell.member_scores, cell.nonmember_scores);
  if (spec.kind == AttackKind::ProjRes)
    cell.rates =
        acc_fpr_at_threshold(cell.member_residuals, cell.nonmember_residuals, tau);
  return cell;
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string cell_file_name(const char* prefix, const CellResult& cell) {
  return std::string(prefix) + "_" + attack_name(cell.spec.kind) + "_r" +
         std::to_string(cell.round) + "_" + cell.tag + ".csv";
}

inline void write_cell_files(const std::filesystem::path& out_dir,
                             const CellResult& cell, double tau) {
  CsvWriter roc({"fpr", "tpr"});
  for (const auto& [fpr, tpr] : cell.roc.points)
    roc.row({format_double(fpr), format_double(tpr)});
  write_file_atomic(out_dir / cell_file_name("roc", cell), roc.str());

  CsvWriter scores({"repetition", "target_client", "sample_id", "is_member",
                    "score", "residual", "verdict"});
  const bool res = cell.has_residuals();
  for (std::size_t i = 0; i < cell.draws.size(); ++i) {
    const auto& d = cell.draws[i];
    const auto emit = [&](std::size_t id, bool member, double score, double r) {
      scores.row({std::to_string(d.repetition), std::to_string(d.target_client),
                  std::to_string(id), member ? "1" : "0", format_double(score),
                  res ? format_double(r) : "",
                  res ? (projres_decide(r, tau) ? "member" : "nonmember") : ""});
    };
    emit(d.member_id, true, cell.member_scores[i],
         res ? cell.member_residuals[i] : 0.0);
    emit(d.nonmember_id, false, cell.nonmember_scores[i],
         res ? cell.nonmember_residuals[i] : 0.0);
  }
  write_file_atomic(out_dir / cell_file_name("scores", cell), scores.str());
}

inline std::vector<std::string> results_header() {
  return {"config_hash", "seed", "defense", "sigma", "clip", "beta",
          "attack", "round", "repetitions", "auc", "accuracy", "fpr",
          "mean_member_score", "mean_nonmember_score", "mean_member_residual",
          "mean_nonmember_residual", "degenerate_count"};
}

inline void append_result_row(CsvWriter& results, const std::string& hash,
                              const ExperimentConfig& cfg,
                              const DefenseConfig& defense,
                              const CellResult& cell) {
  const bool res = cell.has_residuals();
  results.row({hash, std::to_string(cfg.evaluation.seed), defense_tag(defense),
               format_double(defense.sigma), format_double(defense.clip),
               format_double(defense.beta), attack_name(cell.spec.kind),
               std::to_string(cell.round), std::to_string(cell.draws.size()),
               format_double(cell.roc.auc),
               res ? format_double(cell.rates.accuracy) : "",
               res ? format_double(cell.rates.fpr) : "",
               format_double(mean_of(cell.member_scores)),
               format_double(mean_of(cell.nonmember_scores)),
               res ? format_double(mean_of(cell.member_residuals)) : "",
               res ? format_double(mean_of(cell.nonmember_residuals)) : "",
               std::to_string(cell.degenerate_count)});
}

inline json manifest_json(const ExperimentConfig& cfg, const std::string& hash) {
  json manifest;
  manifest["artifact_version"] = kArtifactVersion;
  manifest["config_hash"] = hash;
  manifest["created_utc"] = utc_timestamp();
  manifest["config"] = experiment_config_to_json(cfg);
  return manifest;
}

// Evaluates every attack at every requested round against one trace and
// appends the result rows; per-cell files land in out_dir as they finish.
inline void run_cells_for_trace(const ExperimentConfig& cfg, const Model& model,
                                const Dataset& dataset, const TrainingTrace& trace,
                                const DefenseConfig& defense,
                                const std::string& hash, CsvWriter& results,
                                const std::filesystem::path& out_dir,
                                std::ostream& log) {
  const std::string tag = defense_tag(defense);
  for (std::size_t round : cfg.evaluation.rounds) {
    const auto draws =
        draw_evaluation_pairs(trace.round(round), dataset, cfg.evaluation);
    for (const auto& spec : cfg.attacks) {
      CellResult cell = evaluate_cell(spec, model, dataset, trace, round,
                                      cfg.tau, draws, tag);
      append_result_row(results, hash, cfg, defense, cell);
      write_cell_files(out_dir, cell, cfg.tau);
      log << tag << " round " << round << " " << attack_name(spec.kind)
          << ": auc=" << format_double(cell.roc.auc) << "\n";
    }
  }
}

}  // namespace detail

inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  const std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);
  const std::string hash = config_hash(cfg);
  write_file_atomic(out_dir / "manifest.json",
                    detail::manifest_json(cfg, hash).dump(2) + "\n");

  const FrozenBackbone backbone = build_backbone(cfg.backbone);
  const Dataset dataset = build_dataset(cfg.dataset, backbone);

  CsvWriter results(detail::results_header());
  for (const auto& defense : cfg.defenses) {
    Model model = build_model(cfg.backbone, cfg.modules, cfg.dataset.num_classes);
    FederationConfig fed = cfg.federation;
    fed.defense = defense;
    const TrainingTrace trace = run_training(model, dataset, fed);
    log << "trained " << defense_tag(defense)
        << ": final mean client loss "
        << format_double(trace.rounds.back().mean_client_loss) << "\n";

    if (cfg.export_trace) {
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.defenses = {defense};
      const auto trace_dir = out_dir / ("trace_" + defense_tag(defense));
      write_trace(trace_dir, trace);
      write_file_atomic(trace_dir / "manifest.json",
                        detail::manifest_json(cell_cfg, hash).dump(2) + "\n");
    }

    detail::run_cells_for_trace(cfg, model, dataset, trace, defense, hash,
                                results, out_dir, log);
  }
  write_file_atomic(out_dir / "results.csv", results.str());
  log << "wrote " << (out_dir / "results.csv").string() << "\n";
  return 0;
}

inline int run_boundary_scan(std::size_t n, std::size_t m, std::size_t p_lo,
                             std::size_t p_hi, std::size_t trials,
                             std::uint64_t seed,
                             const std::filesystem::path& out_path,
                             std::ostream& log) {
  if (p_lo < 1 || p_lo > p_hi) throw ValidationError("empty p range");
  std::vector<std::size_t> p_values(p_hi - p_lo + 1);
  std::iota(p_values.begin(), p_values.end(), p_lo);
  const auto points = empirical_boundary_scan(n, m, p_values, trials, seed);

  CsvWriter csv({"n", "m", "p", "mean_residual", "auc"});
  for (const auto& pt : points)
    csv.row({std::to_string(n), std::to_string(m), std::to_string(pt.p),
             format_double(pt.mean_member_residual), format_double(pt.auc)});
  if (!out_path.empty()) {
    if (out_path.has_parent_path())
      std::filesystem::create_directories(out_path.parent_path());
    write_file_atomic(out_path, csv.str());
  }
  log << "p_max = " << empirical_p_max(points) << "\n";
  return 0;
}

// Trains with the first defense in the grid and dumps the trace for the
// `attack` subcommand; the manifest inside the trace dir records the setup.
inline int run_export_trace(const ExperimentConfig& cfg, std::ostream& log) {
  ExperimentConfig cell_cfg = cfg;
  cell_cfg.defenses = {cfg.defenses.front()};
  const std::filesystem::path out_dir(cfg.output_dir);
  const auto trace_dir =
      out_dir / ("trace_" + defense_tag(cell_cfg.defenses.front()));

  const FrozenBackbone backbone = build_backbone(cfg.backbone);
  const Dataset dataset = build_dataset(cfg.dataset, backbone);
  Model model = build_model(cfg.backbone, cfg.modules, cfg.dataset.num_classes);
  FederationConfig fed = cfg.federation;
  fed.defense = cell_cfg.defenses.front();
  const TrainingTrace trace = run_training(model, dataset, fed);

  write_trace(trace_dir, trace);
  write_file_atomic(trace_dir / "manifest.json",
                    detail::manifest_json(cell_cfg, config_hash(cell_cfg)).dump(2) +
                        "\n");
  log << "trace written to " << trace_dir.string() << "\n";
  return 0;
}

// Attack config supplies attacks/evaluation/tau/output_dir; the trace
// manifest supplies everything the trace was produced with.
inline int run_attack_on_trace(const std::filesystem::path& trace_dir,
                               const ExperimentConfig& attack_cfg,
                               std::ostream& log) {
  const auto manifest_path = trace_dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("trace manifest: ") + e.what());
  }
  if (!manifest.contains("config"))
    throw ValidationError("trace manifest has no config section");
  ExperimentConfig cfg = parse_experiment_config(manifest.at("config").dump());

  cfg.attacks = attack_cfg.attacks;
  cfg.evaluation = attack_cfg.evaluation;
  cfg.tau = attack_cfg.tau;
  cfg.output_dir = attack_cfg.output_dir;
  cfg.export_trace = false;
  cfg.validate();

  const std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);
  const std::string hash = config_hash(cfg);
  write_file_atomic(out_dir / "manifest.json",
                    detail::manifest_json(cfg, hash).dump(2) + "\n");

  const FrozenBackbone backbone = build_backbone(cfg.backbone);
  const Dataset dataset = build_dataset(cfg.dataset, backbone);
  const Model model = build_model(cfg.backbone, cfg.modules, cfg.dataset.num_classes);
  const TrainingTrace trace = read_trace(trace_dir);

  CsvWriter results(detail::results_header());
  detail::run_cells_for_trace(cfg, model, dataset, trace, cfg.defenses.front(),
                              hash, results, out_dir, log);
  write_file_atomic(out_dir / "results.csv", results.str());
  log << "wrote " << (out_dir / "results.csv").string() << "\n";
  return 0;
}

}  // namespace fedaudit
