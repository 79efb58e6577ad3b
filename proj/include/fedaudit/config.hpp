#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedaudit/attacks.hpp"
#include "fedaudit/dataset.hpp"
#include "fedaudit/defenses.hpp"
#include "fedaudit/errors.hpp"
#include "fedaudit/federation.hpp"
#include "fedaudit/model.hpp"

// Experiment configuration: JSON in, validated structs out, canonical JSON
// back out. Parse errors and unknown values carry the config line they came
// from so the CLI can anchor its exit-2 messages.

namespace fedaudit {

using json = nlohmann::json;

struct EvaluationConfig {
  std::vector<std::size_t> rounds;  // round indices to attack, 0-based
  std::size_t repetitions = 100;
  std::uint64_t seed = 4;

  void validate() const {
    if (rounds.empty()) throw ValidationError("evaluation.rounds must be non-empty");
    if (repetitions < 1)
      throw ValidationError("evaluation.repetitions must be at least 1");
  }
};

struct ExperimentConfig {
  BackboneConfig backbone;
  std::vector<ModuleSpec> modules;
  DatasetConfig dataset;
  FederationConfig federation;
  std::vector<DefenseConfig> defenses;  // grid; each cell retrains
  std::vector<AttackSpec> attacks;
  double tau = 1e-2;
  EvaluationConfig evaluation;
  std::string output_dir = "out";
  bool export_trace = false;

  void validate() const {
    backbone.validate();
    if (modules.empty()) throw ValidationError("modules must be non-empty");
    dataset.validate();
    federation.validate();
    if (defenses.empty()) throw ValidationError("defenses must be non-empty");
    for (const auto& d : defenses) d.validate();
    if (attacks.empty()) throw ValidationError("attacks must be non-empty");
    if (tau <= 0.0) throw ValidationError("tau must be positive");
    evaluation.validate();
    if (output_dir.empty()) throw ValidationError("output_dir must be non-empty");
    for (const auto& r : evaluation.rounds)
      if (r >= federation.rounds)
        throw ValidationError("evaluation round " + std::to_string(r) +
                              " outside the training run");
  }
};

namespace detail {

// Best-effort line anchor: first config line containing the token.
inline std::size_t line_of_token(const std::string& text, const std::string& token) {
  const std::size_t pos = text.find(token);
  if (pos == std::string::npos) return 1;
  std::size_t line = 1;
  for (std::size_t i = 0; i < pos; ++i)
    if (text[i] == '\n') ++line;
  return line;
}

struct ConfigCursor {
  const std::string& text;

  [[noreturn]] void fail(const std::string& token, const std::string& message) const {
    throw ValidationError("line " + std::to_string(line_of_token(text, token)) +
                          ": " + message);
  }
};

// "evaluation.repetitions must be..." -> "repetitions", a likely config key.
inline std::string first_token_of(const std::string& message) {
  std::string head = message.substr(0, message.find(' '));
  const std::size_t dot = head.rfind('.');
  if (dot != std::string::npos) head = head.substr(dot + 1);
  return head;
}

template <typename T>
T field_or(const json& node, const char* key, T fallback) {
  if (!node.contains(key)) return fallback;
  return node.at(key).get<T>();
}

inline ModuleKind module_kind_from_name(const std::string& name,
                                        const ConfigCursor& cursor) {
  if (name == "adapter_down") return ModuleKind::AdapterDown;
  if (name == "lora") return ModuleKind::LoRA;
  if (name == "q_proj") return ModuleKind::QProj;
  if (name == "ffn_down_proj") return ModuleKind::FFNDownProj;
  cursor.fail(name, "unknown module kind: " + name);
}

inline std::string module_kind_name(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::AdapterDown: return "adapter_down";
    case ModuleKind::LoRA: return "lora";
    case ModuleKind::QProj: return "q_proj";
    case ModuleKind::FFNDownProj: return "ffn_down_proj";
  }
  throw ValidationError("unknown module kind");
}

inline DefenseKind defense_kind_from_name(const std::string& name,
                                          const ConfigCursor& cursor) {
  if (name == "none") return DefenseKind::None;
  if (name == "dp") return DefenseKind::DP;
  if (name == "gp") return DefenseKind::GP;
  cursor.fail(name, "unknown defense kind: " + name);
}

inline std::string defense_kind_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::None: return "none";
    case DefenseKind::DP: return "dp";
    case DefenseKind::GP: return "gp";
  }
  throw ValidationError("unknown defense kind");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(e.what());  // nlohmann messages carry the line
  }
  detail::ConfigCursor cursor{text};
  ExperimentConfig cfg;
  try {
    if (root.contains("backbone")) {
      const json& b = root.at("backbone");
      cfg.backbone.vocab_size =
          detail::field_or<std::size_t>(b, "vocab_size", cfg.backbone.vocab_size);
      cfg.backbone.hidden_dim =
          detail::field_or<std::size_t>(b, "hidden_dim", cfg.backbone.hidden_dim);
      cfg.backbone.num_frozen_layers = detail::field_or<std::size_t>(
          b, "num_frozen_layers", cfg.backbone.num_frozen_layers);
      cfg.backbone.embedding_scale = detail::field_or<double>(
          b, "embedding_scale", cfg.backbone.embedding_scale);
      cfg.backbone.seed =
          detail::field_or<std::uint64_t>(b, "seed", cfg.backbone.seed);
    }
    if (root.contains("modules")) {
      for (const json& m : root.at("modules")) {
        ModuleSpec spec;
        const std::string kind = detail::field_or<std::string>(m, "kind", "adapter_down");
        spec.kind = detail::module_kind_from_name(kind, cursor);
        spec.ratio = detail::field_or<double>(m, "ratio", spec.ratio);
        spec.position = detail::field_or<std::size_t>(m, "position", spec.position);
        spec.id = detail::field_or<std::string>(m, "id", spec.id);
        cfg.modules.push_back(std::move(spec));
      }
    }
    if (cfg.modules.empty()) cfg.modules.push_back(ModuleSpec{});
    if (root.contains("dataset")) {
      const json& d = root.at("dataset");
      const std::string kind = detail::field_or<std::string>(d, "kind", "synthetic");
      if (kind == "synthetic") {
        cfg.dataset.kind = DatasetConfig::Kind::Synthetic;
      } else if (kind == "text_file") {
        cfg.dataset.kind = DatasetConfig::Kind::TextFile;
      } else {
        cursor.fail(kind, "unknown dataset kind: " + kind);
      }
      cfg.dataset.seed = detail::field_or<std::uint64_t>(d, "seed", cfg.dataset.seed);
      cfg.dataset.num_samples =
          detail::field_or<std::size_t>(d, "num_samples", cfg.dataset.num_samples);
      cfg.dataset.num_heldout =
          detail::field_or<std::size_t>(d, "num_heldout", cfg.dataset.num_heldout);
      cfg.dataset.num_classes =
          detail::field_or<std::size_t>(d, "num_classes", cfg.dataset.num_classes);
      cfg.dataset.len_min = detail::field_or<std::size_t>(d, "len_min", cfg.dataset.len_min);
      cfg.dataset.len_max = detail::field_or<std::size_t>(d, "len_max", cfg.dataset.len_max);
      cfg.dataset.path = detail::field_or<std::string>(d, "path", cfg.dataset.path);
    }
    if (root.contains("federation")) {
      const json& f = root.at("federation");
      cfg.federation.num_clients =
          detail::field_or<std::size_t>(f, "num_clients", cfg.federation.num_clients);
      cfg.federation.batch_size =
          detail::field_or<std::size_t>(f, "batch_size", cfg.federation.batch_size);
      cfg.federation.learning_rate = detail::field_or<double>(
          f, "learning_rate", cfg.federation.learning_rate);
      cfg.federation.rounds =
          detail::field_or<std::size_t>(f, "rounds", cfg.federation.rounds);
      cfg.federation.seed =
          detail::field_or<std::uint64_t>(f, "seed", cfg.federation.seed);
    }
    if (root.contains("defenses")) {
      for (const json& d : root.at("defenses")) {
        DefenseConfig def;
        const std::string kind = detail::field_or<std::string>(d, "kind", "none");
        def.kind = detail::defense_kind_from_name(kind, cursor);
        def.sigma = detail::field_or<double>(d, "sigma", def.sigma);
        def.clip = detail::field_or<double>(d, "clip", def.clip);
        def.beta = detail::field_or<double>(d, "beta", def.beta);
        def.noise_seed = detail::field_or<std::uint64_t>(d, "noise_seed", def.noise_seed);
        cfg.defenses.push_back(def);
      }
    }
    if (cfg.defenses.empty()) cfg.defenses.push_back(DefenseConfig{});
    if (root.contains("attacks")) {
      for (const json& a : root.at("attacks")) {
        AttackSpec spec;
        if (a.is_string()) {
          const std::string name = a.get<std::string>();
          try {
            spec.kind = attack_kind_from_name(name);
          } catch (const ValidationError&) {
            cursor.fail(name, "unknown attack name: " + name);
          }
        } else {
          const std::string name = detail::field_or<std::string>(a, "kind", "projres");
          try {
            spec.kind = attack_kind_from_name(name);
          } catch (const ValidationError&) {
            cursor.fail(name, "unknown attack name: " + name);
          }
          spec.fta_window =
              detail::field_or<std::size_t>(a, "fta_window", spec.fta_window);
          spec.rank_tol = detail::field_or<double>(a, "rank_tol", spec.rank_tol);
          spec.target_modules = detail::field_or<std::vector<std::string>>(
              a, "target_modules", spec.target_modules);
        }
        cfg.attacks.push_back(std::move(spec));
      }
    }
    if (cfg.attacks.empty()) cfg.attacks.push_back(AttackSpec{});
    cfg.tau = detail::field_or<double>(root, "tau", cfg.tau);
    if (root.contains("evaluation")) {
      const json& e = root.at("evaluation");
      cfg.evaluation.rounds = detail::field_or<std::vector<std::size_t>>(
          e, "rounds", cfg.evaluation.rounds);
      cfg.evaluation.repetitions = detail::field_or<std::size_t>(
          e, "repetitions", cfg.evaluation.repetitions);
      cfg.evaluation.seed =
          detail::field_or<std::uint64_t>(e, "seed", cfg.evaluation.seed);
    }
    if (cfg.evaluation.rounds.empty())
      cfg.evaluation.rounds.push_back(cfg.federation.rounds - 1);
    cfg.output_dir = detail::field_or<std::string>(root, "output_dir", cfg.output_dir);
    cfg.export_trace = detail::field_or<bool>(root, "export_trace", cfg.export_trace);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("line 1: ") + e.what());
  }

  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("line " +
                          std::to_string(detail::line_of_token(
                              text, detail::first_token_of(e.what()))) +
                          ": " + e.what());
  }
  return cfg;
}

// Canonical serialization: stable key order, round-tripping floats.
inline json experiment_config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["backbone"] = {{"vocab_size", cfg.backbone.vocab_size},
                      {"hidden_dim", cfg.backbone.hidden_dim},
                      {"num_frozen_layers", cfg.backbone.num_frozen_layers},
                      {"embedding_scale", cfg.backbone.embedding_scale},
                      {"seed", cfg.backbone.seed}};
  root["modules"] = json::array();
  for (const auto& m : cfg.modules)
    root["modules"].push_back({{"kind", detail::module_kind_name(m.kind)},
                               {"ratio", m.ratio},
                               {"position", m.position},
                               {"id", m.id}});
  root["dataset"] = {
      {"kind", cfg.dataset.kind == DatasetConfig::Kind::Synthetic ? "synthetic"
                                                                  : "text_file"},
      {"seed", cfg.dataset.seed},
      {"num_samples", cfg.dataset.num_samples},
      {"num_heldout", cfg.dataset.num_heldout},
      {"num_classes", cfg.dataset.num_classes},
      {"len_min", cfg.dataset.len_min},
      {"len_max", cfg.dataset.len_max},
      {"path", cfg.dataset.path}};
  root["federation"] = {{"num_clients", cfg.federation.num_clients},
                        {"batch_size", cfg.federation.batch_size},
                        {"learning_rate", cfg.federation.learning_rate},
                        {"rounds", cfg.federation.rounds},
                        {"seed", cfg.federation.seed}};
  root["defenses"] = json::array();
  for (const auto& d : cfg.defenses)
    root["defenses"].push_back({{"kind", detail::defense_kind_name(d.kind)},
                                {"sigma", d.sigma},
                                {"clip", d.clip},
                                {"beta", d.beta},
                                {"noise_seed", d.noise_seed}});
  root["attacks"] = json::array();
  for (const auto& a : cfg.attacks)
    root["attacks"].push_back({{"kind", attack_name(a.kind)},
                               {"fta_window", a.fta_window},
                               {"rank_tol", a.rank_tol},
                               {"target_modules", a.target_modules}});
  root["tau"] = cfg.tau;
  root["evaluation"] = {{"rounds", cfg.evaluation.rounds},
                        {"repetitions", cfg.evaluation.repetitions},
                        {"seed", cfg.evaluation.seed}};
  root["output_dir"] = cfg.output_dir;
  root["export_trace"] = cfg.export_trace;
  return root;
}

inline std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  return experiment_config_to_json(cfg).dump(2) + "\n";
}

}  // namespace fedaudit
