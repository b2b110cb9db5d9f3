#include "doctest.h"

#include <array>
#include <cmath>
#include <sstream>

#include "qnbm/error.hpp"
#include "qnbm/format.hpp"
#include "qnbm/model.hpp"
#include "qnbm/model_support.hpp"
#include "support.hpp"

using namespace qnbm;
using model::ModelKind;

namespace {

const std::vector<double> kLevels{0.1, 0.3, 0.5, 0.7, 0.9};

model::QnbmParams trained_like_qnbm(bool revin, double dropout = 0.0, std::uint64_t seed = 3) {
  num::Rng rng(seed);
  auto data = testing::random_dataset(rng, 12, 5, 3, revin ? 3 : 0);
  auto cfg = testing::small_config(ModelKind::Qnbm, 3, kLevels);
  cfg.revin = revin;
  auto p = model::init_qnbm(cfg, data, dropout, rng);
  // Move the head away from its near-zero start so every path carries gradient.
  for (auto& t : model::trainable_tensors(p))
    if (t.name.starts_with("head.v") || t.name.starts_with("shape.w"))
      for (double& v : t.tensor->values()) v *= 10.0;
  return p;
}

}  // namespace

TEST_CASE("forward pass matches the scalar oracle on crafted weights") {
  for (bool factorized : {false, true}) {
    const auto p = testing::crafted_qnbm(4, factorized);
    num::Rng rng(5);
    const num::Matrix x = num::sample_normal(rng, 9, 4, 0.0, 2.0);
    const auto out = model::forward(p, x, model::Mode::Eval).quantiles;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto q = testing::qnbm_scalar_oracle(p, x.row(r));
      for (std::size_t c = 0; c < q.size(); ++c) CHECK(std::abs(out(r, c) - q[c]) <= 1e-12);
    }
  }
}

TEST_CASE("zero network returns beta for every input") {
  auto p = testing::crafted_qnbm(3, false);
  p.basis.w1.fill(0.0);
  p.basis.w2.fill(0.0);
  p.basis.b2.fill(0.0);
  p.shape.w.dense.fill(0.0);
  p.head.v.dense.fill(0.0);
  num::Rng rng(2);
  const auto out = model::forward(p, num::sample_normal(rng, 5, 3, 0.0, 10.0), model::Mode::Eval).quantiles;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(out(r, c) == p.head.beta.values()[c]);
}

TEST_CASE("single-feature perturbations change outputs by V times the shape difference") {
  const auto p = testing::crafted_qnbm(4, true);
  const num::Matrix v = p.head.v.effective();
  num::Rng rng(8);
  for (int probe = 0; probe < 200; ++probe) {
    num::Matrix x = num::sample_normal(rng, 1, 4, 0.0, 2.0);
    const auto i = static_cast<std::size_t>(rng.uniform_index(4));
    num::Matrix x2 = x;
    x2(0, i) += rng.normal();
    const auto q1 = model::forward(p, x, model::Mode::Eval).quantiles;
    const auto q2 = model::forward(p, x2, model::Mode::Eval).quantiles;
    const std::array<double, 2> at{x(0, i), x2(0, i)};
    const auto f = model::shape_values(p, i, at);
    const double df = f[1] - f[0];
    for (std::size_t c = 0; c < q1.cols(); ++c) CHECK(std::abs((q2(0, c) - q1(0, c)) - v(c, i) * df) <= 1e-9);
  }
}

TEST_CASE("QNBM gradients match central differences") {
  for (bool revin : {false, true}) {
    CAPTURE(revin);
    auto p = trained_like_qnbm(revin);
    num::Rng rng(21);
    auto data = testing::random_dataset(rng, 6, 5, 3, revin ? 3 : 0);
    const auto check = testing::check_gradients(p, data.inputs, data.targets);
    CAPTURE(check.worst_tensor);
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("QR-DNN gradients match central differences") {
  for (bool revin : {false, true}) {
    CAPTURE(revin);
    num::Rng rng(4);
    auto data = testing::random_dataset(rng, 12, 5, 3, revin ? 3 : 0);
    auto cfg = testing::small_config(ModelKind::Qrdnn, 3, kLevels);
    cfg.revin = revin;
    auto p = model::init_qrdnn(cfg, data, 0.0, rng);
    for (double& v : p.output.weight.values()) v *= 20.0;
    // Zero-initialized biases put rows with all-dead first-layer units exactly
    // on a ReLU kink, where central differences see half the slope.
    p.hidden1.bias = num::sample_normal(rng, p.hidden1.bias.rows(), 1, 0.0, 0.3);
    p.hidden2.bias = num::sample_normal(rng, p.hidden2.bias.rows(), 1, 0.0, 0.3);
    const auto check = testing::check_gradients(p, data.inputs, data.targets);
    CAPTURE(check.worst_tensor);
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("dropped basis units receive no gradient through them") {
  auto p = trained_like_qnbm(false, 0.5);
  num::Rng rng(13);
  auto data = testing::random_dataset(rng, 4, 5, 3);
  auto fw = model::forward(p, data.inputs, model::Mode::Train, &rng);
  REQUIRE(fw.cache.basis_mask.size() > 0);
  const auto& mask = fw.cache.basis_mask;
  // Masked entries of the basis output are exactly zero, the rest are scaled by 2.
  for (std::size_t s = 0; s < mask.rows(); ++s)
    for (std::size_t k = 0; k < mask.cols(); ++k) {
      CHECK((mask(s, k) == 0.0 || mask(s, k) == 2.0));
      if (mask(s, k) == 0.0) CHECK(fw.cache.basis_out(s, k) == 0.0);
    }
  // A fully dropped basis unit gets no gradient on its bias.
  num::Matrix full(mask.rows(), mask.cols(), 1.0);
  for (std::size_t s = 0; s < mask.rows(); ++s) full(s, 0) = 0.0;
  fw.cache.basis_mask = full;
  fw.cache.basis_out = num::hadamard(num::relu(fw.cache.basis_pre), full);
  const auto pl = train::pinball_loss(data.targets, fw.quantiles, kLevels);
  const auto g = model::backward(p, fw.cache, pl.gradient);
  CHECK(g.basis.b2(0, 0) == 0.0);
  for (std::size_t j = 0; j < g.basis.w2.cols(); ++j) CHECK(g.basis.w2(0, j) == 0.0);
}

TEST_CASE("train-mode dropout needs a generator and stale caches are rejected") {
  auto p = trained_like_qnbm(false, 0.3);
  num::Rng rng(1);
  auto data = testing::random_dataset(rng, 3, 5, 3);
  CHECK_THROWS_AS(model::forward(p, data.inputs, model::Mode::Train), ContractError);
  auto fw = model::forward(p, data.inputs, model::Mode::Train, &rng);
  ++p.common.revision;
  CHECK_THROWS_AS(model::backward(p, fw.cache, fw.quantiles), ContractError);
}

TEST_CASE("shape errors name the feature counts") {
  const auto p = trained_like_qnbm(false);
  try {
    model::forward(p, num::Matrix(2, 4), model::Mode::Eval);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
}

TEST_CASE("rank larger than the matrix is a parameter error") {
  num::Rng rng(1);
  auto data = testing::random_dataset(rng, 6, 3, 2);
  auto cfg = testing::small_config(ModelKind::Qnbm, 2, {0.5});
  cfg.rank = 4;  // head is 2 × 3
  CHECK_THROWS_AS(model::init_qnbm(cfg, data, 0.0, rng), ParameterError);
}

TEST_CASE("factorized head parameter count and break-even width") {
  const std::size_t width = 24 * 99;
  for (std::size_t nf : {16u, 17u, 75u, 147u}) {
    CAPTURE(nf);
    num::Rng rng(1);
    auto data = testing::random_dataset(rng, 30, nf, 24);
    model::ModelConfig cfg;
    auto p = model::init_qnbm(cfg, data, 0.1, rng);
    CHECK(p.head.v.parameter_count() == (width + nf) * 16);
    // 16·(2376 + n_f) < 2376·n_f only once n_f exceeds 16.
    CHECK((p.head.v.parameter_count() < width * nf) == (nf >= 17));
  }
  num::Rng rng(1);
  auto narrow = testing::random_dataset(rng, 30, 11, 24);
  CHECK_THROWS_AS(model::init_qnbm(model::ModelConfig{}, narrow, 0.1, rng), ParameterError);
}

TEST_CASE("initialization anchors beta at unconditional quantiles") {
  num::Rng rng(6);
  auto data = testing::random_dataset(rng, 40, 4, 2);
  auto cfg = testing::small_config(ModelKind::Qnbm, 2, {0.1, 0.5, 0.9});
  const auto p = model::init_qnbm(cfg, data, 0.0, rng);
  for (std::size_t h = 0; h < 2; ++h) {
    std::vector<double> col;
    for (std::size_t r = 0; r < 40; ++r) col.push_back((data.targets(r, h) - p.common.scaling.target.mean) /
                                                      p.common.scaling.target.scale);
    std::sort(col.begin(), col.end());
    for (std::size_t g = 0; g < 3; ++g) {
      const double pos = cfg.levels[g] * 39.0;
      const auto lo = static_cast<std::size_t>(pos);
      const double expect = col[lo] + (pos - static_cast<double>(lo)) * (col[std::min<std::size_t>(lo + 1, 39)] - col[lo]);
      CHECK(p.head.beta(h, g) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(p.basis.b2.values()[0] == 0.0);
}

TEST_CASE("RevIN round trip is the identity, including constant rows") {
  model::RevinLayer layer;
  layer.enabled = true;
  layer.column_count = 5;
  layer.affine_scale(0, 0) = 1.7;
  layer.affine_shift(0, 0) = -0.4;
  num::Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(5);
    for (double& x : v) x = 50.0 + 20.0 * rng.normal();
    const auto back = model::revin_roundtrip(layer, v);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(back[i] - v[i]) <= 1e-10);
  }
  const std::vector<double> flat(5, 42.0);
  const auto back = model::revin_roundtrip(layer, flat);
  for (double x : back) CHECK(std::abs(x - 42.0) <= 1e-10);
  layer.affine_scale(0, 0) = 0.0;
  CHECK_THROWS_AS(model::revin_denormalize(layer, flat, 0.0, 1.0), NumericError);
}

TEST_CASE("sorted predictions are monotone in the level") {
  auto p = trained_like_qnbm(false);
  num::Rng rng(17);
  auto data = testing::random_dataset(rng, 50, 5, 3);
  const auto raw = model::forward(p, data.inputs, model::Mode::Eval).quantiles;
  const auto sorted = model::predict(p, data.inputs);
  for (std::size_t r = 0; r < sorted.rows(); ++r)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t g = 1; g < kLevels.size(); ++g) CHECK(sorted(r, h * 5 + g) >= sorted(r, h * 5 + g - 1));
  CHECK(num::sum(raw) == doctest::Approx(num::sum(sorted)).epsilon(1e-12));
}

TEST_CASE("checkpoints reload bit for bit") {
  for (ModelKind kind : {ModelKind::Qnbm, ModelKind::Qrdnn}) {
    for (bool revin : {false, true}) {
      num::Rng rng(30);
      auto data = testing::random_dataset(rng, 20, 6, 3, 3);
      auto cfg = testing::small_config(kind, 3, kLevels);
      cfg.revin = revin;
      cfg.factorize_shape = revin;
      const auto params = model::init_model(cfg, data, 0.2, rng);
      const auto bytes = model::serialize_checkpoint(params);
      const auto back = model::deserialize_checkpoint(bytes);
      CHECK(model::bitwise_equal(params, back));
      CHECK(model::serialize_checkpoint(back) == bytes);
      CHECK(num::bitwise_equal(model::predict(params, data.inputs), model::predict(back, data.inputs)));
    }
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  num::Rng rng(31);
  auto data = testing::random_dataset(rng, 20, 4, 2);
  const auto params = model::init_model(testing::small_config(ModelKind::Qnbm, 2, {0.5}), data, 0.0, rng);
  const auto bytes = model::serialize_checkpoint(params);
  CHECK_THROWS_AS(model::deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), IntegrityError);
  CHECK_THROWS_AS(model::deserialize_checkpoint(bytes.substr(0, 10)), IntegrityError);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(model::deserialize_checkpoint(flipped), IntegrityError);

  // A well-formed file from another format version.
  std::string other = bytes.substr(0, bytes.size() - 8);
  other[8] = 2;
  const std::uint64_t h = fnv1a64(other);
  for (int i = 0; i < 8; ++i) other.push_back(static_cast<char>((h >> (8 * i)) & 0xFF));
  CHECK_THROWS_AS(model::deserialize_checkpoint(other), IncompatibleError);
}

TEST_CASE("datasets with other features are refused") {
  num::Rng rng(32);
  auto data = testing::random_dataset(rng, 20, 4, 2);
  const auto params = model::init_model(testing::small_config(ModelKind::Qnbm, 2, {0.5}), data, 0.0, rng);
  auto wider = testing::random_dataset(rng, 5, 5, 2);
  CHECK_THROWS_AS(model::ensure_compatible(params, wider), ShapeError);
  auto renamed = data;
  renamed.feature_names[0] = "other";
  CHECK_THROWS_AS(model::ensure_compatible(params, renamed), IncompatibleError);
}
