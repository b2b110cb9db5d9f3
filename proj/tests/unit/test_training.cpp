#include "doctest.h"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "qnbm/backtest.hpp"
#include "qnbm/error.hpp"
#include "qnbm/synth.hpp"
#include "support.hpp"

using namespace qnbm;
using namespace qnbm::testing;
using num::Matrix;

namespace {

const std::vector<double> kLevels{0.1, 0.5, 0.9};

train::TrainConfig quick_train(std::size_t epochs) {
  train::TrainConfig t;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.learning_rate = 1e-2;
  t.seed = 11;
  return t;
}

data::WindowConfig small_windows() {
  data::WindowConfig w;
  w.price_lag_days = {1};
  w.exogenous = {"load_fcst", "wind_fcst"};
  return w;
}

}  // namespace

TEST_CASE("pinball loss matches the literal definition") {
  num::Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double y = 10.0 * rng.normal();
    const double q = 10.0 * rng.normal();
    const double g = 0.001 + 0.998 * rng.uniform();
    CHECK(std::abs(train::pinball(y, q, g) - pinball_oracle(y, q, g)) <= 1e-12);
    CHECK(train::pinball(y, q, g) >= 0.0);
  }
  CHECK(train::pinball(1.0, 0.0, 0.5) == 0.5);
  CHECK(train::pinball(2.0, 2.0, 0.3) == 0.0);
  CHECK(train::pinball(3.0, 1.0, 0.9) == doctest::Approx(1.8));
  CHECK(train::pinball(1.0, 3.0, 0.9) == doctest::Approx(0.2));
}

TEST_CASE("pinball loss is convex in q") {
  num::Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const double y = rng.normal(), a = 3 * rng.normal(), b = 3 * rng.normal();
    const double g = rng.uniform() * 0.98 + 0.01, t = rng.uniform();
    const double mid = train::pinball(y, t * a + (1 - t) * b, g);
    CHECK(mid <= t * train::pinball(y, a, g) + (1 - t) * train::pinball(y, b, g) + 1e-12);
  }
}

TEST_CASE("mean pinball loss and its gradient") {
  const Matrix y = Matrix::from_rows({{1.0}, {2.0}});
  const Matrix q = Matrix::from_rows({{0.0, 1.0, 2.0}, {2.0, 2.0, 2.0}});
  const auto r = train::pinball_loss(y, q, kLevels);
  double expect = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t g = 0; g < 3; ++g) expect += pinball_oracle(y(i, 0), q(i, g), kLevels[g]);
  CHECK(r.loss == doctest::Approx(expect / 6.0).epsilon(1e-14));
  // Tie at q == y takes the y <= q branch.
  CHECK(r.gradient(0, 1) == doctest::Approx((1.0 - 0.5) / 6.0));
  CHECK(r.gradient(0, 0) == doctest::Approx(-0.1 / 6.0));
  CHECK(r.gradient(1, 2) == doctest::Approx((1.0 - 0.9) / 6.0));
  CHECK(train::pinball_value(y, q, kLevels) == r.loss);
  CHECK_THROWS_AS(train::pinball_loss(y, Matrix(2, 2), kLevels), ShapeError);
  const std::vector<double> bad{0.0, 0.5, 0.9};
  CHECK_THROWS_AS(train::pinball_loss(y, q, bad), ParameterError);
}

TEST_CASE("Adam takes a learning-rate sized first step") {
  Matrix w(1, 1, 1.0);
  train::Adam adam(0.1);
  auto step = [&](double grad) {
    Matrix g(1, 1, grad);
    const model::NamedTensor p[] = {{"w", &w}};
    const model::ConstNamedTensor gr[] = {{"w", &g}};
    adam.step(p, gr);
  };
  step(2.0 * w(0, 0));  // d(w^2)/dw
  CHECK(w(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(adam.steps() == 1);

  Matrix z(1, 1, 3.0);
  train::Adam still(0.1);
  Matrix zero(1, 1, 0.0);
  const model::NamedTensor zp[] = {{"z", &z}};
  const model::ConstNamedTensor zg[] = {{"z", &zero}};
  still.step(zp, zg);
  CHECK(z(0, 0) == 3.0);

  // A constant gradient moves every step by lr·sign once the moments settle.
  Matrix c(1, 1, 0.0);
  train::Adam steady(0.01);
  Matrix g(1, 1, -5.0);
  const model::NamedTensor cp[] = {{"c", &c}};
  const model::ConstNamedTensor cg[] = {{"c", &g}};
  for (int i = 0; i < 3000; ++i) steady.step(cp, cg);
  const double before = c(0, 0);
  steady.step(cp, cg);
  CHECK(c(0, 0) - before == doctest::Approx(0.01).epsilon(1e-4));

  Matrix nan(1, 1, std::nan(""));
  const model::ConstNamedTensor ng[] = {{"c", &nan}};
  CHECK_THROWS_WITH_AS(steady.step(cp, ng), doctest::Contains("'c'"), NumericError);
}

TEST_CASE("early stopping counts epochs since the best") {
  train::EarlyStopping s(2);
  CHECK(s.update(1, 5.0));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.update(2, 5.0));  // equal is not an improvement
  CHECK(s.update(3, 4.0));
  CHECK_FALSE(s.update(4, 4.5));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.update(5, 4.1));
  CHECK(s.should_stop());
  CHECK(s.best_epoch() == 3);
  CHECK(s.best_loss() == 4.0);

  train::EarlyStopping zero(0);
  zero.update(1, 1.0);
  CHECK(zero.should_stop());
}

TEST_CASE("patience zero trains one epoch") {
  num::Rng rng(1);
  const auto d = random_dataset(rng, 60, 4, 2);
  auto t = quick_train(50);
  t.patience = 0;
  const auto r = train::fit(small_config(model::ModelKind::Qnbm, 2, kLevels), d, t);
  CHECK(r.history.epochs.size() == 1);
  CHECK(r.history.best_epoch == 1);
}

TEST_CASE("validation splits and batch structure") {
  train::TrainConfig t;
  num::Rng rng(3);
  const auto split = train::split_rows(100, t, rng);
  CHECK(split.validation.size() == 20);
  CHECK(split.train.size() == 80);
  std::set<std::size_t> all(split.train.begin(), split.train.end());
  all.insert(split.validation.begin(), split.validation.end());
  CHECK(all.size() == 100);

  t.validation = train::ValidationScheme::SequentialFolds;
  const auto seq = train::split_rows(100, t, rng);
  CHECK(seq.validation.front() == 80);
  CHECK(seq.train.back() == 79);

  std::vector<std::size_t> rows(300);
  std::iota(rows.begin(), rows.end(), 0);
  const auto batches = train::epoch_batches(rows, t, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() <= t.batch_size);
    for (std::size_t i = 0; i < b.size(); i += t.sub_block) CHECK(b[i] % t.sub_block == 0);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 300);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 300);
}

TEST_CASE("training configuration is validated") {
  train::TrainConfig t;
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.validation_fraction = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.max_epochs = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  num::Rng rng(2);
  const auto d = random_dataset(rng, 80, 5, 2);
  const auto cfg = small_config(model::ModelKind::Qnbm, 2, kLevels);
  const auto a = train::fit(cfg, d, quick_train(5));
  const auto b = train::fit(cfg, d, quick_train(5));
  CHECK(model::bitwise_equal(a.params, b.params));
  auto other = quick_train(5);
  other.seed = 12;
  CHECK_FALSE(model::bitwise_equal(a.params, train::fit(cfg, d, other).params));

  std::ostringstream csv;
  train::write_history_csv(a.history, csv);
  CHECK(csv.str().rfind("epoch,train_loss,val_loss\n", 0) == 0);
}

TEST_CASE("best epoch parameters are returned") {
  num::Rng rng(5);
  const auto d = random_dataset(rng, 80, 5, 2);
  train::FitHooks hooks;
  hooks.validation_override = [](std::size_t e) -> std::optional<double> { return e == 3 ? 0.5 : 1.0 + e; };
  std::vector<double> seen;
  hooks.on_epoch_end = [&](const train::EpochRecord& r) { seen.push_back(r.val_loss); };
  auto t = quick_train(10);
  t.patience = 4;
  const auto r = train::fit(small_config(model::ModelKind::Qnbm, 2, kLevels), d, t, hooks);
  CHECK(r.history.best_epoch == 3);
  CHECK(r.history.epochs.size() == 7);
  CHECK(r.history.stopped_early);
  CHECK(seen.size() == 7);
  train::FitHooks short_hooks;
  short_hooks.validation_override = hooks.validation_override;
  const auto three = train::fit(small_config(model::ModelKind::Qnbm, 2, kLevels), d, quick_train(3), short_hooks);
  CHECK(model::bitwise_equal(r.params, three.params));
}

TEST_CASE("a noiseless market is learned to a small validation loss") {
  data::SynthSpec spec;
  spec.sigma.fill(0.0);
  const auto frame = data::synth_generate(600, spec);
  const auto d = data::build_windows(frame, small_windows());
  model::ModelConfig cfg;
  cfg.hidden_units = 16;
  cfg.basis_count = 16;
  cfg.rank = 4;
  cfg.levels = kLevels;
  auto t = quick_train(50);
  t.dropout_rate = 0.0;
  const auto r = train::fit(cfg, d, t);
  double sum = 0.0, sq = 0.0;
  for (double v : d.targets.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(d.targets.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  MESSAGE("noiseless val loss " << r.history.best_val_loss << ", target sd " << sd);
  CHECK(r.history.best_val_loss < 0.05 * sd);
}

TEST_CASE("divergence is reported with the epoch") {
  num::Rng rng(6);
  auto d = random_dataset(rng, 40, 3, 1);
  d.targets(5, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train::fit(small_config(model::ModelKind::Qnbm, 1, kLevels), d, quick_train(3)), Error);
}

TEST_CASE("grid search keeps the best cell") {
  num::Rng rng(8);
  const auto d = random_dataset(rng, 80, 4, 2);
  const auto cfg = small_config(model::ModelKind::Qnbm, 2, kLevels);
  train::GridSpec one;
  one.hidden_units = {7};
  one.basis_count = {6};
  one.learning_rate = {1e-2};
  one.dropout_rate = {0.1};
  const auto single = train::grid_search(cfg, d, quick_train(4), one);
  REQUIRE(single.cells.size() == 1);
  CHECK(single.best == 0);
  CHECK(single.best_cell().val_loss == train::fit(cfg, d, quick_train(4)).history.best_val_loss);

  train::GridSpec two = one;
  two.learning_rate = {10.0, 1e-2};
  const auto g = train::grid_search(cfg, d, quick_train(4), two);
  CHECK(g.cells.size() == 2);
  CHECK(g.best == 1);
  CHECK(train::GridSpec::qnbm_reference().cell_count() > 1);
  train::GridSpec empty;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("reference hyperparameters") {
  const auto de = train::reference_hyperparameters(model::ModelKind::Qnbm, "DE");
  CHECK(de.hidden_units == 64);
  CHECK(de.learning_rate == 5e-4);
  CHECK(train::reference_hyperparameters(model::ModelKind::Qnbm, "BE").dropout_rate == 0.3);
  CHECK(train::reference_hyperparameters(model::ModelKind::Qrdnn, "DE").hidden_units == 640);
  CHECK_THROWS_AS(train::reference_hyperparameters(model::ModelKind::Qnbm, "FR"), ConfigError);
}

TEST_CASE("backtest retrains per block without seeing the future") {
  const auto frame = data::synth_generate(80, data::SynthSpec{});
  const auto windows = small_windows();
  auto cfg = small_config(model::ModelKind::Qnbm, 24, kLevels);
  train::BacktestPlan plan;
  plan.test_start = frame.first_day() + 60;
  plan.test_end = frame.first_day() + 73;
  plan.folds = 2;
  const auto t = quick_train(3);
  const auto r = train::backtest(plan, frame, windows, cfg, t);
  REQUIRE(r.blocks.size() == 2);
  CHECK(plan.block_count() == 2);
  CHECK(r.forecast.size() == 14);
  CHECK(r.blocks[0].train_last == plan.test_start - 1);
  CHECK(r.blocks[1].train_last == plan.test_start + 6);
  CHECK(r.blocks[1].first == plan.test_start + 7);
  CHECK(r.targets(0, 5) == frame.price[60 * 24 + 5]);

  // Prices from day D on may change every forecast after D but none before.
  const std::size_t cut = 64;
  auto shifted = frame;
  for (std::size_t t2 = cut * 24; t2 < shifted.hours(); ++t2) shifted.price[t2] += 100.0;
  const auto s = train::backtest(plan, shifted, windows, cfg, t);
  for (std::size_t d = 0; d < r.forecast.size(); ++d) {
    const auto day = static_cast<std::size_t>(r.forecast.days[d] - frame.first_day());
    bool same = true;
    for (std::size_t c = 0; c < r.forecast.values.cols(); ++c)
      same = same && r.forecast.values(d, c) == s.forecast.values(d, c);
    if (day <= cut) CHECK(same);
    else CHECK_FALSE(same);
  }
}

TEST_CASE("backtest plans are validated") {
  const auto frame = data::synth_generate(40, data::SynthSpec{});
  const auto cfg = small_config(model::ModelKind::Qnbm, 24, kLevels);
  train::BacktestPlan plan;
  plan.test_start = frame.first_day() + 30;
  plan.test_end = frame.first_day() + 29;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan.test_end = frame.last_day() + 1;
  CHECK_THROWS_AS(train::backtest(plan, frame, small_windows(), cfg, quick_train(1)), ConfigError);
  plan.test_start = frame.first_day() + 3;
  plan.test_end = frame.first_day() + 5;
  CHECK_THROWS_AS(train::backtest(plan, frame, small_windows(), cfg, quick_train(1)), ConfigError);
  plan.cadence_days = 0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
}
