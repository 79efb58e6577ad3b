#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedaudit/defenses.hpp"
#include "fedaudit/errors.hpp"
#include "fedaudit/linalg.hpp"
#include "fedaudit/matrix.hpp"
#include "fedaudit/rng.hpp"

// Synthetic frozen backbone (seeded embedding table plus fixed orthogonal
// mixing layers with tanh) and trainable linear modules inserted between the
// frozen layers. Every op is row-local per token, so a sample's embedding rows
// do not depend on what else shares the batch; only the classification head's
// mean pooling crosses tokens. Forward and backward are hand-written.

namespace fedaudit {

using TokenSeq = std::vector<std::uint32_t>;

inline constexpr std::uint32_t kPadToken = 0;

struct BackboneConfig {
  std::size_t vocab_size = 1000;
  std::size_t hidden_dim = 64;
  std::size_t num_frozen_layers = 2;
  double embedding_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 2) throw ValidationError("vocab_size must be at least 2");
    if (hidden_dim < 2) throw ValidationError("hidden_dim must be at least 2");
    if (embedding_scale <= 0.0)
      throw ValidationError("embedding_scale must be positive");
  }
};

struct FrozenBackbone {
  BackboneConfig config;
  Matrix embedding;            // vocab_size x hidden_dim
  std::vector<Matrix> mixing;  // each hidden_dim x hidden_dim, orthogonal
};

inline FrozenBackbone build_backbone(const BackboneConfig& config) {
  config.validate();
  FrozenBackbone b;
  b.config = config;
  std::mt19937_64 rng(config.seed);
  b.embedding = gaussian_matrix(config.vocab_size, config.hidden_dim, rng,
                                config.embedding_scale);
  b.mixing.reserve(config.num_frozen_layers);
  for (std::size_t l = 0; l < config.num_frozen_layers; ++l) {
    Matrix g = gaussian_matrix(config.hidden_dim, config.hidden_dim, rng);
    b.mixing.push_back(qr_decompose(g).q);
  }
  return b;
}

enum class ModuleKind { AdapterDown, LoRA, QProj, FFNDownProj };

struct ModuleSpec {
  ModuleKind kind = ModuleKind::AdapterDown;
  double ratio = 2.0;        // bottleneck divisor for AdapterDown / LoRA
  std::size_t position = 0;  // module applies after this many mixing layers
  std::string id = "module0";

  std::size_t bottleneck(std::size_t hidden_dim) const {
    switch (kind) {
      case ModuleKind::AdapterDown:
      case ModuleKind::LoRA: {
        if (ratio <= 0.0) throw ValidationError("module ratio must be positive");
        auto m = static_cast<std::size_t>(std::llround(
            static_cast<double>(hidden_dim) / ratio));
        if (m < 1) throw ValidationError("module ratio leaves no bottleneck units");
        return m;
      }
      case ModuleKind::QProj:
      case ModuleKind::FFNDownProj:
        return hidden_dim;
    }
    throw ValidationError("unknown module kind");
  }
};

// Down weight and bias follow the shared linear form Y = X * W + b. The up
// weight (adapter and LoRA paths) and the bias stay at their initial values;
// uploads carry down-weight gradients only.
struct TrainableModule {
  ModuleSpec spec;
  Matrix weight;  // n x m
  Vector bias;    // m
  Matrix up;      // m x n for AdapterDown / LoRA, empty otherwise
};

struct ClassifierHead {
  Matrix weight;  // n x num_classes
};

struct HiddenBatch {
  Matrix embeddings;                    // p x n, one row per token after padding
  std::vector<std::size_t> token_owner;  // row -> sample index within the batch
  std::vector<std::uint8_t> is_pad;
};

struct Model {
  FrozenBackbone backbone;
  std::vector<TrainableModule> modules;
  ClassifierHead head;
  std::size_t num_classes = 2;

  std::size_t hidden_dim() const { return backbone.config.hidden_dim; }

  const TrainableModule& module_by_id(const std::string& id) const {
    for (const auto& m : modules)
      if (m.spec.id == id) return m;
    throw ValidationError("unknown module id: " + id);
  }
};

inline TrainableModule init_module(const ModuleSpec& spec, std::size_t n,
                                   std::mt19937_64& rng) {
  if (spec.position > 64) throw ValidationError("module position out of range");
  TrainableModule mod;
  mod.spec = spec;
  const std::size_t m = spec.bottleneck(n);
  const double wscale = 1.0 / std::sqrt(static_cast<double>(n));
  const double uscale = 1.0 / std::sqrt(static_cast<double>(m));
  switch (spec.kind) {
    case ModuleKind::AdapterDown:
    case ModuleKind::LoRA:
      mod.weight = gaussian_matrix(n, m, rng, wscale);
      mod.up = gaussian_matrix(m, n, rng, uscale);
      break;
    case ModuleKind::QProj: {
      mod.weight = Matrix::identity(n);
      Matrix noise = gaussian_matrix(n, n, rng, 0.02 * wscale);
      mod.weight += noise;
      break;
    }
    case ModuleKind::FFNDownProj:
      mod.weight = gaussian_matrix(n, n, rng, 0.1 * wscale);
      break;
  }
  mod.bias = Vector(m, 0.0);
  return mod;
}

inline Model build_model(const BackboneConfig& backbone_config,
                         const std::vector<ModuleSpec>& specs,
                         std::size_t num_classes) {
  if (num_classes < 2) throw ValidationError("need at least two classes");
  Model model;
  model.backbone = build_backbone(backbone_config);
  model.num_classes = num_classes;
  const std::size_t n = backbone_config.hidden_dim;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].position > backbone_config.num_frozen_layers)
      throw ValidationError("module position exceeds frozen layer count");
    for (std::size_t j = 0; j < i; ++j)
      if (specs[j].id == specs[i].id)
        throw ValidationError("duplicate module id: " + specs[i].id);
    std::mt19937_64 rng(mix_seed(backbone_config.seed, 1, i));
    model.modules.push_back(init_module(specs[i], n, rng));
  }
  std::mt19937_64 head_rng(mix_seed(backbone_config.seed, 2));
  model.head.weight = gaussian_matrix(n, num_classes, head_rng,
                                      1.0 / std::sqrt(static_cast<double>(n)));
  return model;
}

// Embedding lookup over the batch padded to its longest sequence. Pad rows are
// real rows of the hidden batch; they are excluded from pooling later.
inline HiddenBatch embed_tokens(const FrozenBackbone& backbone,
                                const std::vector<TokenSeq>& batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  std::size_t max_len = 0;
  for (const auto& seq : batch) {
    if (seq.empty()) throw ValidationError("empty token sequence");
    max_len = std::max(max_len, seq.size());
  }
  const std::size_t n = backbone.config.hidden_dim;
  HiddenBatch hb;
  hb.embeddings = Matrix(batch.size() * max_len, n);
  hb.token_owner.resize(batch.size() * max_len);
  hb.is_pad.resize(batch.size() * max_len);
  std::size_t row = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (std::size_t t = 0; t < max_len; ++t, ++row) {
      const bool pad = t >= batch[s].size();
      const std::uint32_t tok = pad ? kPadToken : batch[s][t];
      if (tok >= backbone.config.vocab_size)
        throw ValidationError("token id " + std::to_string(tok) +
                              " outside vocabulary");
      hb.token_owner[row] = s;
      hb.is_pad[row] = pad ? 1 : 0;
      for (std::size_t j = 0; j < n; ++j)
        hb.embeddings(row, j) = backbone.embedding(tok, j);
    }
  }
  return hb;
}

inline Matrix apply_mixing(const Matrix& x, const Matrix& mix) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Vector h = matvec(mix, x.row(i));
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = std::tanh(h[j]);
  }
  return out;
}

inline Matrix forward_linear(const Matrix& w, const Vector& b, const Matrix& x) {
  if (x.cols() != w.rows()) throw ValidationError("linear layer shape mismatch");
  Matrix y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  return y;
}

// Down-path output Y = X * W + b shared by every module kind.
inline Matrix forward_trainable(const TrainableModule& mod, const HiddenBatch& x) {
  return forward_linear(mod.weight, mod.bias, x.embeddings);
}

namespace detail {

struct ModuleForward {
  Matrix input;   // X entering the module
  Matrix pre;     // Y = X W + b
  Matrix output;  // module output fed downstream
};

inline ModuleForward module_forward(const TrainableModule& mod, Matrix x) {
  ModuleForward f;
  f.pre = forward_linear(mod.weight, mod.bias, x);
  switch (mod.spec.kind) {
    case ModuleKind::AdapterDown: {
      Matrix act = f.pre;
      for (double& v : act.flat()) v = v > 0.0 ? v : 0.0;
      f.output = x + matmul(act, mod.up);
      break;
    }
    case ModuleKind::LoRA:
      f.output = x + matmul(f.pre, mod.up);
      break;
    case ModuleKind::QProj:
      f.output = f.pre;
      break;
    case ModuleKind::FFNDownProj:
      f.output = x + f.pre;
      break;
  }
  f.input = std::move(x);
  return f;
}

// Returns the gradient with respect to the module input and fills grad_w.
inline Matrix module_backward(const TrainableModule& mod, const ModuleForward& f,
                              const Matrix& grad_out, Matrix& grad_w) {
  Matrix alpha;  // d loss / d pre
  switch (mod.spec.kind) {
    case ModuleKind::AdapterDown: {
      alpha = matmul(grad_out, mod.up.transposed());
      for (std::size_t i = 0; i < alpha.rows(); ++i)
        for (std::size_t j = 0; j < alpha.cols(); ++j)
          if (f.pre(i, j) <= 0.0) alpha(i, j) = 0.0;
      break;
    }
    case ModuleKind::LoRA:
      alpha = matmul(grad_out, mod.up.transposed());
      break;
    case ModuleKind::QProj:
    case ModuleKind::FFNDownProj:
      alpha = grad_out;
      break;
  }
  grad_w = transposed_matmul(f.input, alpha);
  Matrix grad_in = matmul(alpha, mod.weight.transposed());
  if (mod.spec.kind != ModuleKind::QProj) grad_in += grad_out;
  return grad_in;
}

struct Stage {
  bool is_module = false;
  std::size_t index = 0;  // module index or mixing layer index
};

inline std::vector<Stage> pipeline_stages(const Model& model) {
  std::vector<Stage> stages;
  const std::size_t layers = model.backbone.mixing.size();
  for (std::size_t pos = 0; pos <= layers; ++pos) {
    for (std::size_t i = 0; i < model.modules.size(); ++i)
      if (model.modules[i].spec.position == pos) stages.push_back({true, i});
    if (pos < layers) stages.push_back({false, pos});
  }
  return stages;
}

}  // namespace detail

// Per-token hidden rows entering the given module at the current parameters,
// i.e. the surface the gradient-span attack matches candidates against. With
// module_index = npos the full pipeline output is returned.
inline HiddenBatch forward_hidden(const Model& model,
                                  const std::vector<TokenSeq>& batch,
                                  std::size_t stop_module_index = size_t(-1)) {
  HiddenBatch hb = embed_tokens(model.backbone, batch);
  for (const auto& stage : detail::pipeline_stages(model)) {
    if (stage.is_module) {
      if (stage.index == stop_module_index) return hb;
      hb.embeddings =
          detail::module_forward(model.modules[stage.index], std::move(hb.embeddings))
              .output;
    } else {
      hb.embeddings = apply_mixing(hb.embeddings, model.backbone.mixing[stage.index]);
    }
  }
  return hb;
}

inline HiddenBatch forward_hidden_for(const Model& model,
                                      const std::vector<TokenSeq>& batch,
                                      const std::string& module_id) {
  for (std::size_t i = 0; i < model.modules.size(); ++i)
    if (model.modules[i].spec.id == module_id) return forward_hidden(model, batch, i);
  throw ValidationError("unknown module id: " + module_id);
}

struct LossAndGradients {
  double loss = 0.0;
  ModuleGradients gradients;  // module id -> down-weight gradient, plus "head"
};

// Forward through the full pipeline, mean-pool non-pad rows per sample, apply
// the linear head and softmax cross-entropy, then backpropagate by hand.
// Gradients cover each module's down weight and the head weight.
inline LossAndGradients loss_and_gradients(const Model& model,
                                           const std::vector<TokenSeq>& batch,
                                           const std::vector<std::size_t>& labels) {
  if (batch.empty()) throw ValidationError("empty batch");
  if (labels.size() != batch.size())
    throw ValidationError("labels length must match batch size");
  for (std::size_t y : labels)
    if (y >= model.num_classes) throw ValidationError("label out of range");

  HiddenBatch hb = embed_tokens(model.backbone, batch);
  const auto stages = detail::pipeline_stages(model);

  std::vector<detail::ModuleForward> module_fwd(model.modules.size());
  std::vector<Matrix> mixing_out(model.backbone.mixing.size());
  Matrix x = std::move(hb.embeddings);
  for (const auto& stage : stages) {
    if (stage.is_module) {
      module_fwd[stage.index] =
          detail::module_forward(model.modules[stage.index], std::move(x));
      x = module_fwd[stage.index].output;
    } else {
      x = apply_mixing(x, model.backbone.mixing[stage.index]);
      mixing_out[stage.index] = x;
    }
  }

  const std::size_t samples = batch.size();
  const std::size_t n = model.hidden_dim();
  const std::size_t classes = model.num_classes;

  std::vector<double> token_count(samples, 0.0);
  Matrix pooled(samples, n);
  for (std::size_t row = 0; row < x.rows(); ++row) {
    if (hb.is_pad[row]) continue;
    const std::size_t s = hb.token_owner[row];
    token_count[s] += 1.0;
    for (std::size_t j = 0; j < n; ++j) pooled(s, j) += x(row, j);
  }
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t j = 0; j < n; ++j) pooled(s, j) /= token_count[s];

  Matrix logits = matmul(pooled, model.head.weight);
  double loss = 0.0;
  Matrix dlogits(samples, classes);
  for (std::size_t s = 0; s < samples; ++s) {
    double mx = logits(s, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits(s, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(logits(s, c) - mx);
    loss += -(logits(s, labels[s]) - mx - std::log(denom));
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(logits(s, c) - mx) / denom;
      dlogits(s, c) = (p - (c == labels[s] ? 1.0 : 0.0)) /
                      static_cast<double>(samples);
    }
  }
  loss /= static_cast<double>(samples);

  LossAndGradients out;
  out.loss = loss;
  out.gradients.emplace("head", transposed_matmul(pooled, dlogits));

  Matrix dpooled = matmul(dlogits, model.head.weight.transposed());
  Matrix dx(x.rows(), n);
  for (std::size_t row = 0; row < x.rows(); ++row) {
    if (hb.is_pad[row]) continue;
    const std::size_t s = hb.token_owner[row];
    for (std::size_t j = 0; j < n; ++j)
      dx(row, j) = dpooled(s, j) / token_count[s];
  }

  for (std::size_t si = stages.size(); si-- > 0;) {
    const auto& stage = stages[si];
    if (stage.is_module) {
      Matrix grad_w;
      dx = detail::module_backward(model.modules[stage.index],
                                   module_fwd[stage.index], dx, grad_w);
      out.gradients.emplace(model.modules[stage.index].spec.id, std::move(grad_w));
    } else {
      const Matrix& post = mixing_out[stage.index];
      const Matrix& mix = model.backbone.mixing[stage.index];
      Matrix dpre(dx.rows(), dx.cols());
      for (std::size_t i = 0; i < dx.rows(); ++i)
        for (std::size_t j = 0; j < dx.cols(); ++j)
          dpre(i, j) = dx(i, j) * (1.0 - post(i, j) * post(i, j));
      Matrix dinput(dx.rows(), dx.cols());
      for (std::size_t i = 0; i < dx.rows(); ++i) {
        Vector g = transposed_matvec(mix, dpre.row(i));
        for (std::size_t j = 0; j < dx.cols(); ++j) dinput(i, j) = g[j];
      }
      dx = std::move(dinput);
    }
  }
  return out;
}

inline double sample_loss(const Model& model, const TokenSeq& tokens,
                          std::size_t label) {
  return loss_and_gradients(model, {tokens}, {label}).loss;
}

// Map a batch through a widening linear layer; ranks are preserved for a
// generic widening map, so the widened hidden size does not enlarge the
// recoverable subspace.
inline Matrix upsample_forward(const Matrix& w_up, const HiddenBatch& x) {
  if (w_up.cols() != x.embeddings.cols())
    throw ValidationError("upsample width mismatch");
  if (w_up.rows() <= w_up.cols())
    throw ValidationError("upsample must increase the dimension");
  return matmul(x.embeddings, w_up.transposed());
}

// Trainable parameters as a named map: each module's down weight plus "head".
inline ModuleGradients trainable_parameters(const Model& model) {
  ModuleGradients params;
  for (const auto& mod : model.modules) params.emplace(mod.spec.id, mod.weight);
  params.emplace("head", model.head.weight);
  return params;
}

inline void set_trainable_parameters(Model& model, const ModuleGradients& params) {
  for (auto& mod : model.modules) {
    auto it = params.find(mod.spec.id);
    if (it == params.end())
      throw ValidationError("missing parameters for module " + mod.spec.id);
    if (it->second.rows() != mod.weight.rows() ||
        it->second.cols() != mod.weight.cols())
      throw ValidationError("parameter shape mismatch for module " + mod.spec.id);
    mod.weight = it->second;
  }
  auto it = params.find("head");
  if (it == params.end()) throw ValidationError("missing parameters for head");
  if (it->second.rows() != model.head.weight.rows() ||
      it->second.cols() != model.head.weight.cols())
    throw ValidationError("parameter shape mismatch for head");
  model.head.weight = it->second;
}

}  // namespace fedaudit
