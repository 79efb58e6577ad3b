#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedaudit/errors.hpp"
#include "fedaudit/model.hpp"
#include "fedaudit/rng.hpp"

// Labeled token-sequence datasets. Labels come from a seeded linear probe on
// the frozen backbone's per-token rows, so a linear head over mean-pooled
// embeddings can actually learn the task and loss-based attacks have signal.

namespace fedaudit {

struct DatasetConfig {
  enum class Kind { Synthetic, TextFile };
  Kind kind = Kind::Synthetic;
  std::uint64_t seed = 2;
  std::size_t num_samples = 240;
  std::size_t num_heldout = 200;
  std::size_t num_classes = 2;
  std::size_t len_min = 4;
  std::size_t len_max = 8;
  std::string path;  // TextFile only

  void validate() const {
    if (num_classes < 2) throw ValidationError("dataset needs at least two classes");
    if (kind == Kind::Synthetic) {
      if (num_samples < 1) throw ValidationError("dataset needs at least one sample");
      if (len_min < 1) throw ValidationError("len_min must be at least 1");
      if (len_max < len_min) throw ValidationError("len_max must be >= len_min");
    } else if (path.empty()) {
      throw ValidationError("text dataset needs a path");
    }
  }
};

struct Dataset {
  std::vector<TokenSeq> tokens;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 2;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> heldout_ids;

  std::size_t size() const { return tokens.size(); }
};

namespace detail {

// Frozen-stack row for one token: the sample-independent embedding the label
// probe reads. Trainable modules are deliberately excluded so labels stay a
// fixed function of tokens.
inline Vector backbone_token_row(const FrozenBackbone& backbone, std::uint32_t token) {
  if (token >= backbone.config.vocab_size)
    throw ValidationError("token id outside vocabulary");
  Vector h(backbone.config.hidden_dim);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = backbone.embedding(token, j);
  for (const Matrix& mix : backbone.mixing) {
    Vector pre = matvec(mix, h);
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::tanh(pre[j]);
  }
  return h;
}

// Rank-bucketed labels from the probe score: balanced classes, deterministic.
inline std::vector<std::size_t> assign_labels(const std::vector<double>& scores,
                                              std::size_t num_classes) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<std::size_t> labels(scores.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    labels[order[rank]] = rank * num_classes / order.size();
  return labels;
}

inline std::vector<std::size_t> label_sequences(const FrozenBackbone& backbone,
                                                const std::vector<TokenSeq>& seqs,
                                                std::size_t num_classes,
                                                std::uint64_t seed) {
  std::mt19937_64 probe_rng(mix_seed(seed, 7));
  Vector probe = gaussian_vector(backbone.config.hidden_dim, probe_rng);
  std::vector<std::optional<double>> token_score(backbone.config.vocab_size);
  std::vector<double> scores;
  scores.reserve(seqs.size());
  for (const auto& seq : seqs) {
    double s = 0.0;
    for (std::uint32_t tok : seq) {
      if (!token_score[tok]) {
        Vector row = backbone_token_row(backbone, tok);
        token_score[tok] = dot(row, probe);
      }
      s += *token_score[tok];
    }
    scores.push_back(s / static_cast<double>(seq.size()));
  }
  return assign_labels(scores, num_classes);
}

}  // namespace detail

inline Dataset make_synthetic_dataset(const DatasetConfig& config,
                                      const FrozenBackbone& backbone) {
  config.validate();
  if (backbone.config.vocab_size < 2)
    throw ValidationError("vocabulary too small for non-pad tokens");
  Dataset ds;
  ds.num_classes = config.num_classes;
  const std::size_t total = config.num_samples + config.num_heldout;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> len_dist(config.len_min, config.len_max);
  std::uniform_int_distribution<std::uint32_t> tok_dist(
      1, static_cast<std::uint32_t>(backbone.config.vocab_size - 1));
  ds.tokens.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    TokenSeq seq(len_dist(rng));
    for (auto& t : seq) t = tok_dist(rng);
    ds.tokens.push_back(std::move(seq));
  }
  ds.labels = detail::label_sequences(backbone, ds.tokens, config.num_classes,
                                      config.seed);
  ds.train_ids.resize(config.num_samples);
  std::iota(ds.train_ids.begin(), ds.train_ids.end(), 0);
  ds.heldout_ids.resize(config.num_heldout);
  std::iota(ds.heldout_ids.begin(), ds.heldout_ids.end(), config.num_samples);
  return ds;
}

inline std::uint64_t fnv1a_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// One line = one sample; whitespace tokens hashed into [1, vocab_size).
inline Dataset load_text_dataset(const DatasetConfig& config,
                                 const FrozenBackbone& backbone) {
  config.validate();
  std::ifstream in(config.path);
  if (!in) throw ValidationError("cannot open dataset file: " + config.path);
  Dataset ds;
  ds.num_classes = config.num_classes;
  const auto non_pad = static_cast<std::uint64_t>(backbone.config.vocab_size - 1);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    TokenSeq seq;
    std::string w;
    while (words >> w)
      seq.push_back(static_cast<std::uint32_t>(1 + fnv1a_hash(w) % non_pad));
    if (!seq.empty()) ds.tokens.push_back(std::move(seq));
  }
  if (ds.tokens.size() < 2)
    throw ValidationError("text dataset has fewer than two usable lines");
  if (config.num_heldout >= ds.tokens.size())
    throw ValidationError("heldout count leaves no training samples");
  ds.labels = detail::label_sequences(backbone, ds.tokens, config.num_classes,
                                      config.seed);
  const std::size_t train = ds.tokens.size() - config.num_heldout;
  ds.train_ids.resize(train);
  std::iota(ds.train_ids.begin(), ds.train_ids.end(), 0);
  ds.heldout_ids.resize(config.num_heldout);
  std::iota(ds.heldout_ids.begin(), ds.heldout_ids.end(), train);
  return ds;
}

inline Dataset build_dataset(const DatasetConfig& config,
                             const FrozenBackbone& backbone) {
  return config.kind == DatasetConfig::Kind::Synthetic
             ? make_synthetic_dataset(config, backbone)
             : load_text_dataset(config, backbone);
}

}  // namespace fedaudit
