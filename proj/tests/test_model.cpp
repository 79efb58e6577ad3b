#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fedaudit/linalg.hpp"
#include "fedaudit/model.hpp"
#include "fedaudit/rng.hpp"

using fedaudit::BackboneConfig;
using fedaudit::Matrix;
using fedaudit::Model;
using fedaudit::ModuleKind;
using fedaudit::ModuleSpec;
using fedaudit::TokenSeq;
using fedaudit::Vector;

namespace {

// Independent reference: plain triple-loop matrix product.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

BackboneConfig small_backbone(std::uint64_t seed = 5) {
  BackboneConfig cfg;
  cfg.vocab_size = 50;
  cfg.hidden_dim = 16;
  cfg.num_frozen_layers = 2;
  cfg.seed = seed;
  return cfg;
}

Model small_model(ModuleKind kind, std::uint64_t seed = 5,
                  std::size_t position = 2) {
  ModuleSpec spec;
  spec.kind = kind;
  spec.ratio = 2.0;
  spec.position = position;
  spec.id = "mod0";
  return fedaudit::build_model(small_backbone(seed), {spec}, 2);
}

TokenSeq distinct_tokens(std::size_t count, std::uint32_t start = 1) {
  TokenSeq seq(count);
  for (std::size_t i = 0; i < count; ++i)
    seq[i] = start + static_cast<std::uint32_t>(i);
  return seq;
}

}  // namespace

TEST_CASE("backbone build is deterministic per seed") {
  auto a = fedaudit::build_backbone(small_backbone(9));
  auto b = fedaudit::build_backbone(small_backbone(9));
  CHECK(a.embedding == b.embedding);
  REQUIRE(a.mixing.size() == b.mixing.size());
  for (std::size_t l = 0; l < a.mixing.size(); ++l)
    CHECK(a.mixing[l] == b.mixing[l]);
}

TEST_CASE("different seeds give essentially disjoint embeddings") {
  auto a = fedaudit::build_backbone(small_backbone(1));
  auto b = fedaudit::build_backbone(small_backbone(2));
  std::size_t same = 0, total = a.embedding.rows() * a.embedding.cols();
  for (std::size_t i = 0; i < a.embedding.rows(); ++i)
    for (std::size_t j = 0; j < a.embedding.cols(); ++j)
      if (a.embedding(i, j) == b.embedding(i, j)) ++same;
  CHECK(same <= total / 100);
}

TEST_CASE("embedding table shape follows the config") {
  BackboneConfig cfg;
  cfg.vocab_size = 1000;
  cfg.hidden_dim = 64;
  auto b = fedaudit::build_backbone(cfg);
  CHECK(b.embedding.rows() == 1000);
  CHECK(b.embedding.cols() == 64);
  for (const auto& mix : b.mixing) {
    Matrix mtm = fedaudit::transposed_matmul(mix, mix);
    for (std::size_t i = 0; i < mtm.rows(); ++i)
      for (std::size_t j = 0; j < mtm.cols(); ++j)
        CHECK(std::abs(mtm(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
  }
}

TEST_CASE("hidden batch counts padded tokens") {
  Model m = small_model(ModuleKind::AdapterDown);
  auto one = fedaudit::forward_hidden(m, {TokenSeq{3}});
  CHECK(one.embeddings.rows() == 1);

  auto two = fedaudit::forward_hidden(m, {distinct_tokens(3), distinct_tokens(5, 10)});
  CHECK(two.embeddings.rows() == 10);
  std::size_t pads = 0;
  for (auto flag : two.is_pad) pads += flag;
  CHECK(pads == 2);
  CHECK(two.token_owner[0] == 0);
  CHECK(two.token_owner[9] == 1);
}

TEST_CASE("identical sequences produce identical rows") {
  Model m = small_model(ModuleKind::LoRA);
  auto hb = fedaudit::forward_hidden(m, {distinct_tokens(4), distinct_tokens(4)});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < m.hidden_dim(); ++j)
      CHECK(hb.embeddings(t, j) == hb.embeddings(4 + t, j));
}

TEST_CASE("single-sample rows match the in-batch rows bit for bit") {
  Model m = small_model(ModuleKind::AdapterDown);
  TokenSeq sample = distinct_tokens(4, 7);
  auto batch = fedaudit::forward_hidden_for(
      m, {distinct_tokens(6, 20), sample}, "mod0");
  auto alone = fedaudit::forward_hidden_for(m, {sample}, "mod0");
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t row = 6 + t;
    REQUIRE_FALSE(batch.is_pad[row]);
    for (std::size_t j = 0; j < m.hidden_dim(); ++j)
      CHECK(batch.embeddings(row, j) == alone.embeddings(t, j));
  }
}

TEST_CASE("out of vocabulary tokens are rejected") {
  Model m = small_model(ModuleKind::QProj);
  CHECK_THROWS_AS(fedaudit::forward_hidden(m, {TokenSeq{49, 50}}),
                  fedaudit::ValidationError);
}

TEST_CASE("identity weights pass the input through") {
  Model m = small_model(ModuleKind::QProj);
  m.modules[0].weight = Matrix::identity(m.hidden_dim());
  auto input = fedaudit::forward_hidden(m, {distinct_tokens(3)}, 0);
  Matrix y = fedaudit::forward_trainable(m.modules[0], input);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j)
      CHECK(y(i, j) == input.embeddings(i, j));
}

TEST_CASE("zero input leaves repeated bias rows") {
  Model m = small_model(ModuleKind::AdapterDown);
  std::size_t mm = m.modules[0].weight.cols();
  for (std::size_t j = 0; j < mm; ++j)
    m.modules[0].bias[j] = 0.5 + static_cast<double>(j);
  fedaudit::HiddenBatch hb;
  hb.embeddings = Matrix(3, m.hidden_dim());
  Matrix y = fedaudit::forward_trainable(m.modules[0], hb);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < mm; ++j)
      CHECK(y(i, j) == m.modules[0].bias[j]);
}

TEST_CASE("down-path output matches a naive matmul oracle") {
  Model m = small_model(ModuleKind::LoRA, 31);
  auto input = fedaudit::forward_hidden(m, {distinct_tokens(5)}, 0);
  Matrix y = fedaudit::forward_trainable(m.modules[0], input);
  Matrix want = naive_matmul(input.embeddings, m.modules[0].weight);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j)
      CHECK(std::abs(y(i, j) - want(i, j)) < 1e-12);
}

TEST_CASE("zero head weights give the uniform-logit loss") {
  Model m = small_model(ModuleKind::FFNDownProj);
  m.head.weight = Matrix(m.hidden_dim(), 2);
  auto lg = fedaudit::loss_and_gradients(m, {distinct_tokens(4)}, {1});
  CHECK(lg.loss == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("losses and gradients are deterministic") {
  Model a = small_model(ModuleKind::AdapterDown, 77);
  Model b = small_model(ModuleKind::AdapterDown, 77);
  std::vector<TokenSeq> batch{distinct_tokens(4), distinct_tokens(6, 9)};
  std::vector<std::size_t> labels{0, 1};
  auto la = fedaudit::loss_and_gradients(a, batch, labels);
  auto lb = fedaudit::loss_and_gradients(b, batch, labels);
  CHECK(la.loss == lb.loss);
  REQUIRE(la.gradients.size() == lb.gradients.size());
  for (const auto& [name, g] : la.gradients) CHECK(g == lb.gradients.at(name));
}

TEST_CASE("analytic gradients match central differences") {
  const double eps = 1e-5;
  for (ModuleKind kind : {ModuleKind::AdapterDown, ModuleKind::LoRA,
                          ModuleKind::QProj, ModuleKind::FFNDownProj}) {
    Model m = small_model(kind, 101, 1);
    std::vector<TokenSeq> batch{distinct_tokens(3, 2), distinct_tokens(5, 11)};
    std::vector<std::size_t> labels{0, 1};
    auto lg = fedaudit::loss_and_gradients(m, batch, labels);

    std::mt19937_64 pick(2024);
    for (const auto& [name, grad] : lg.gradients) {
      Matrix& target = name == "head" ? m.head.weight : m.modules[0].weight;
      std::uniform_int_distribution<std::size_t> ri(0, grad.rows() - 1);
      std::uniform_int_distribution<std::size_t> ci(0, grad.cols() - 1);
      for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = ri(pick), j = ci(pick);
        const double keep = target(i, j);
        target(i, j) = keep + eps;
        const double up = fedaudit::loss_and_gradients(m, batch, labels).loss;
        target(i, j) = keep - eps;
        const double down = fedaudit::loss_and_gradients(m, batch, labels).loss;
        target(i, j) = keep;
        const double numeric = (up - down) / (2 * eps);
        const double analytic = grad(i, j);
        CAPTURE(name, i, j);
        CHECK(std::abs(analytic - numeric) /
                  std::max(1.0, std::abs(analytic)) < 1e-5);
      }
    }
  }
}

TEST_CASE("down-weight gradient rank follows min(n, p, m)") {
  Model m = small_model(ModuleKind::AdapterDown, 200, 0);
  auto lg = fedaudit::loss_and_gradients(m, {distinct_tokens(5, 3)}, {1});
  const Matrix& grad = lg.gradients.at("mod0");
  REQUIRE(grad.rows() == 16);
  REQUIRE(grad.cols() == 8);
  CHECK(fedaudit::numerical_rank(grad) == 5);
}

TEST_CASE("gradient columns live in the span of the layer input rows") {
  Model m = small_model(ModuleKind::AdapterDown, 321, 0);
  std::vector<TokenSeq> batch{distinct_tokens(3, 30), distinct_tokens(3, 40)};
  auto lg = fedaudit::loss_and_gradients(m, batch, {0, 1});
  const Matrix& grad = lg.gradients.at("mod0");
  auto input = fedaudit::forward_hidden_for(m, batch, "mod0");
  auto span = fedaudit::make_subspace(input.embeddings.transposed());
  for (std::size_t j = 0; j < grad.cols(); ++j) {
    Vector col(grad.rows());
    for (std::size_t i = 0; i < grad.rows(); ++i) col[i] = grad(i, j);
    Vector rec = fedaudit::project_onto(span, col);
    double resid = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i)
      resid += std::abs(col[i] - rec[i]);
    CHECK(resid < 1e-9 * std::max(1.0, fedaudit::l1_norm(col)));
  }
}

TEST_CASE("batch rows are reproduced from the gradient span") {
  Model m = small_model(ModuleKind::AdapterDown, 404, 0);
  std::vector<TokenSeq> batch{distinct_tokens(3, 5), distinct_tokens(3, 15)};
  auto lg = fedaudit::loss_and_gradients(m, batch, {0, 1});
  const Matrix& grad = lg.gradients.at("mod0");
  CHECK(fedaudit::numerical_rank(grad) == 6);
  auto span = fedaudit::make_subspace(grad);
  auto input = fedaudit::forward_hidden_for(m, batch, "mod0");
  for (std::size_t row = 0; row < input.embeddings.rows(); ++row) {
    Vector rec = fedaudit::project_onto(span, input.embeddings.row(row));
    double resid = 0.0;
    for (std::size_t j = 0; j < rec.size(); ++j)
      resid += std::abs(input.embeddings(row, j) - rec[j]);
    CHECK(resid < 1e-8 * fedaudit::l1_norm(input.embeddings.row(row)));
  }
}

TEST_CASE("pad rows receive no gradient and stay out of the span") {
  Model m = small_model(ModuleKind::AdapterDown, 500, 0);
  std::vector<TokenSeq> batch{distinct_tokens(2, 5), distinct_tokens(4, 15)};
  auto lg = fedaudit::loss_and_gradients(m, batch, {0, 1});
  CHECK(fedaudit::numerical_rank(lg.gradients.at("mod0")) == 6);
}

TEST_CASE("upsampling preserves rank and rejects bad shapes") {
  Model m = small_model(ModuleKind::AdapterDown, 600);
  auto hb = fedaudit::forward_hidden_for(m, {distinct_tokens(4, 8)}, "mod0");
  std::mt19937_64 rng(42);
  Matrix w_up = fedaudit::gaussian_matrix(64, 16, rng);
  Matrix up = fedaudit::upsample_forward(w_up, hb);
  CHECK(up.rows() == 4);
  CHECK(up.cols() == 64);
  CHECK(fedaudit::numerical_rank(up) == fedaudit::numerical_rank(hb.embeddings));

  Matrix narrow = fedaudit::gaussian_matrix(8, 16, rng);
  CHECK_THROWS_AS(fedaudit::upsample_forward(narrow, hb), fedaudit::ValidationError);

  fedaudit::HiddenBatch zero;
  zero.embeddings = Matrix(4, 16);
  Matrix upz = fedaudit::upsample_forward(w_up, zero);
  CHECK(upz.frobenius_norm() == 0.0);
}

TEST_CASE("model input validation") {
  Model m = small_model(ModuleKind::AdapterDown);
  CHECK_THROWS_AS(fedaudit::loss_and_gradients(m, {}, {}), fedaudit::ValidationError);
  CHECK_THROWS_AS(fedaudit::loss_and_gradients(m, {distinct_tokens(3)}, {0, 1}),
                  fedaudit::ValidationError);
  CHECK_THROWS_AS(fedaudit::loss_and_gradients(m, {distinct_tokens(3)}, {5}),
                  fedaudit::ValidationError);
  BackboneConfig bad;
  bad.hidden_dim = 1;
  CHECK_THROWS_AS(fedaudit::build_backbone(bad), fedaudit::ValidationError);
}
