#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedaudit/dataset.hpp"
#include "fedaudit/defenses.hpp"
#include "fedaudit/errors.hpp"
#include "fedaudit/model.hpp"
#include "fedaudit/parallel.hpp"
#include "fedaudit/rng.hpp"

// Federated SGD: every round each client computes one mini-batch gradient of
// the trainable parameters at the current global parameters, applies its
// defense, and uploads; the server averages the uploads and steps. The trace
// records exactly what an honest-but-curious server observes per round (the
// global parameters and the post-defense uploads) plus the ground-truth batch
// sample ids reserved for the evaluation harness.

namespace fedaudit {

struct FederationConfig {
  std::size_t num_clients = 30;
  std::size_t batch_size = 4;
  double learning_rate = 0.5;
  std::size_t rounds = 50;
  std::uint64_t seed = 3;
  DefenseConfig defense;

  void validate() const {
    if (num_clients < 1) throw ValidationError("need at least one client");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
    if (rounds < 1) throw ValidationError("need at least one round");
    defense.validate();
  }
};

struct GradientUpdate {
  ModuleGradients per_module;  // post-defense, as the server sees it
  std::size_t round = 0;
  std::size_t client = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  bool present = true;
  ModuleGradients params;  // global trainable parameters entering this round
  std::vector<GradientUpdate> updates;
  std::vector<std::vector<std::size_t>> batch_ids;  // ground truth, harness only
  double mean_client_loss = 0.0;
};

struct TrainingTrace {
  std::vector<RoundRecord> rounds;
  ModuleGradients final_params;

  const RoundRecord& round(std::size_t t) const {
    if (t >= rounds.size())
      throw NeedsHistoryError("round " + std::to_string(t) + " outside the trace");
    if (!rounds[t].present)
      throw NeedsHistoryError("round " + std::to_string(t) +
                              " was removed from the trace");
    return rounds[t];
  }
};

// Shuffled ids dealt into k sets whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> partition_data(
    const std::vector<std::size_t>& ids, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("need at least one partition");
  if (k > ids.size())
    throw ValidationError("more partitions than samples: " + std::to_string(k) +
                          " > " + std::to_string(ids.size()));
  std::vector<std::size_t> shuffled = ids;
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<std::vector<std::size_t>> parts(k);
  const std::size_t base = ids.size() / k;
  const std::size_t extra = ids.size() % k;
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t take = base + (c < extra ? 1 : 0);
    parts[c].assign(shuffled.begin() + cursor, shuffled.begin() + cursor + take);
    cursor += take;
  }
  return parts;
}

// Without-replacement mini-batch sampler: a fresh shuffled pass per epoch,
// epochs advancing whenever fewer than batch_size ids remain.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> ids, std::size_t batch_size,
               std::uint64_t seed)
      : ids_(std::move(ids)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ > ids_.size())
      throw ValidationError("batch_size exceeds a client partition of " +
                            std::to_string(ids_.size()));
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_size_ > ids_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::vector<std::size_t> batch(ids_.begin() + cursor_,
                                   ids_.begin() + cursor_ + batch_size_);
    cursor_ += batch_size_;
    return batch;
  }

 private:
  void reshuffle() {
    std::mt19937_64 rng(mix_seed(seed_, epoch_));
    std::shuffle(ids_.begin(), ids_.end(), rng);
    cursor_ = 0;
  }

  std::vector<std::size_t> ids_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

struct ClientRoundResult {
  GradientUpdate update;
  double loss = 0.0;
};

inline ClientRoundResult client_round(const Model& model, const Dataset& dataset,
                                      const std::vector<std::size_t>& batch_ids,
                                      const DefenseConfig& defense,
                                      std::size_t round, std::size_t client) {
  std::vector<TokenSeq> batch;
  std::vector<std::size_t> labels;
  batch.reserve(batch_ids.size());
  for (std::size_t id : batch_ids) {
    batch.push_back(dataset.tokens.at(id));
    labels.push_back(dataset.labels.at(id));
  }
  LossAndGradients lg = loss_and_gradients(model, batch, labels);
  ClientRoundResult out;
  out.loss = lg.loss;
  out.update.round = round;
  out.update.client = client;
  out.update.per_module =
      apply_defense(lg.gradients, defense, mix_seed(defense.noise_seed, round, client));
  return out;
}

// theta <- theta - (eta / K) * sum of uploads, summed in ascending client order.
inline void aggregate_and_step(ModuleGradients& params,
                               const std::vector<GradientUpdate>& updates,
                               double learning_rate) {
  if (updates.empty()) throw ValidationError("no updates to aggregate");
  for (auto& [name, value] : params) {
    Matrix sum(value.rows(), value.cols());
    for (const auto& update : updates) {
      auto it = update.per_module.find(name);
      if (it == update.per_module.end())
        throw ValidationError("update from client " + std::to_string(update.client) +
                              " is missing module " + name);
      if (it->second.rows() != value.rows() || it->second.cols() != value.cols())
        throw ValidationError("gradient shape mismatch for module " + name);
      sum += it->second;
    }
    sum *= learning_rate / static_cast<double>(updates.size());
    value -= sum;
  }
}

inline TrainingTrace run_training(Model& model, const Dataset& dataset,
                                  const FederationConfig& config) {
  config.validate();
  auto partitions = partition_data(dataset.train_ids, config.num_clients, config.seed);
  std::vector<BatchSampler> samplers;
  samplers.reserve(config.num_clients);
  for (std::size_t c = 0; c < config.num_clients; ++c)
    samplers.emplace_back(partitions[c], config.batch_size,
                          mix_seed(config.seed, 17, c));

  TrainingTrace trace;
  trace.rounds.reserve(config.rounds);
  for (std::size_t t = 0; t < config.rounds; ++t) {
    RoundRecord record;
    record.round = t;
    record.params = trainable_parameters(model);
    record.updates.resize(config.num_clients);
    record.batch_ids.resize(config.num_clients);
    std::vector<double> losses(config.num_clients, 0.0);
    for (std::size_t c = 0; c < config.num_clients; ++c)
      record.batch_ids[c] = samplers[c].next();
    parallel_for(config.num_clients, [&](std::size_t c) {
      ClientRoundResult r = client_round(model, dataset, record.batch_ids[c],
                                         config.defense, t, c);
      record.updates[c] = std::move(r.update);
      losses[c] = r.loss;
    });
    record.mean_client_loss =
        std::accumulate(losses.begin(), losses.end(), 0.0) /
        static_cast<double>(config.num_clients);
    ModuleGradients params = record.params;
    aggregate_and_step(params, record.updates, config.learning_rate);
    set_trainable_parameters(model, params);
    trace.rounds.push_back(std::move(record));
  }
  trace.final_params = trainable_parameters(model);
  return trace;
}

// Copy of the trace with every round except t stripped: what a single-round
// adversary retains. Accessing a stripped round raises a history error.
inline TrainingTrace restrict_to_round(const TrainingTrace& trace, std::size_t t) {
  if (t >= trace.rounds.size())
    throw ValidationError("round outside the trace");
  TrainingTrace out;
  out.rounds.resize(trace.rounds.size());
  for (std::size_t i = 0; i < trace.rounds.size(); ++i) {
    if (i == t) {
      out.rounds[i] = trace.rounds[i];
    } else {
      out.rounds[i].round = i;
      out.rounds[i].present = false;
    }
  }
  out.final_params = trace.final_params;
  return out;
}

}  // namespace fedaudit
