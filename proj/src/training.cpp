#include "qnbm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm::train {

namespace {

void check_levels(std::span<const double> levels) {
  for (double g : levels)
    if (!(g > 0.0 && g < 1.0)) throw ParameterError("quantile level " + fmt_double(g) + " is outside (0, 1)");
}

void check_shapes(const num::Matrix& targets, const num::Matrix& quantiles, std::size_t level_count) {
  if (quantiles.rows() != targets.rows() || quantiles.cols() != targets.cols() * level_count) {
    throw ShapeError("pinball: quantiles " + quantiles.shape_string() + " do not match targets " +
                     targets.shape_string() + " with " + std::to_string(level_count) + " levels");
  }
}

}  // namespace

double pinball(double y, double q, double level) { return y > q ? (y - q) * level : (q - y) * (1.0 - level); }

PinballResult pinball_loss(const num::Matrix& targets, const num::Matrix& quantiles, std::span<const double> levels) {
  check_levels(levels);
  check_shapes(targets, quantiles, levels.size());
  const std::size_t nl = levels.size();
  PinballResult out{0.0, num::Matrix(quantiles.rows(), quantiles.cols())};
  const double n = static_cast<double>(quantiles.size());
  double total = 0.0;
  for (std::size_t r = 0; r < targets.rows(); ++r) {
    for (std::size_t h = 0; h < targets.cols(); ++h) {
      const double y = targets(r, h);
      for (std::size_t g = 0; g < nl; ++g) {
        const double q = quantiles(r, h * nl + g);
        total += pinball(y, q, levels[g]);
        out.gradient(r, h * nl + g) = (y > q ? -levels[g] : 1.0 - levels[g]) / n;
      }
    }
  }
  out.loss = quantiles.size() == 0 ? 0.0 : total / n;
  return out;
}

double pinball_value(const num::Matrix& targets, const num::Matrix& quantiles, std::span<const double> levels) {
  check_levels(levels);
  check_shapes(targets, quantiles, levels.size());
  const std::size_t nl = levels.size();
  double total = 0.0;
  for (std::size_t r = 0; r < targets.rows(); ++r)
    for (std::size_t h = 0; h < targets.cols(); ++h)
      for (std::size_t g = 0; g < nl; ++g) total += pinball(targets(r, h), quantiles(r, h * nl + g), levels[g]);
  return quantiles.size() == 0 ? 0.0 : total / static_cast<double>(quantiles.size());
}

// ---------------------------------------------------------------------------

Adam::Adam(double learning_rate, AdamOptions options) : lr_(learning_rate), options_(options) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ParameterError("learning rate must be positive and finite");
}

void Adam::step(std::span<const model::NamedTensor> params, std::span<const model::ConstNamedTensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient tensor counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != grads[i].name)
      throw ShapeError("adam: tensor '" + params[i].name + "' paired with gradient '" + grads[i].name + "'");
    num::require_same_shape(*params[i].tensor, *grads[i].tensor, "adam");
    if (!num::all_finite(*grads[i].tensor))
      throw NumericError("non-finite gradient in tensor '" + grads[i].name + "' at step " + std::to_string(step_ + 1));
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor->rows(), p.tensor->cols());
      v_.emplace_back(p.tensor->rows(), p.tensor->cols());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: tensor list changed between steps");
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor->values();
    auto g = grads[i].tensor->values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.epsilon);
    }
  }
}

void apply_gradients(Adam& adam, model::ModelParams& params, const model::ModelParams& grads) {
  std::visit(
      [&](auto& p) {
        using P = std::decay_t<decltype(p)>;
        const auto& g = std::get<P>(grads);
        const auto pt = model::trainable_tensors(p);
        const auto gt = model::trainable_tensors(g);
        adam.step(pt, gt);
        ++p.common.revision;
      },
      params);
}

// ---------------------------------------------------------------------------

bool EarlyStopping::update(std::size_t epoch, double loss) {
  if (!seen_ || loss < best_loss_) {
    seen_ = true;
    best_loss_ = loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (sub_block == 0 || batch_size == 0) throw ConfigError("batch_size and sub_block must be positive");
  if (batch_size % sub_block != 0) throw ConfigError("batch_size must be a multiple of sub_block");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
  if (validation == ValidationScheme::SequentialFolds && folds == 0) throw ConfigError("folds must be positive");
}

void write_history_csv(const History& history, std::ostream& out) {
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.val_loss) << '\n';
}

void save_history_csv(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_history_csv(history, out);
}

ValidationSplit split_rows(std::size_t rows, const TrainConfig& cfg, num::Rng& rng) {
  if (rows < 2) throw DataError("need at least 2 rows to hold out a validation set, got " + std::to_string(rows));
  auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(rows)));
  n_val = std::clamp<std::size_t>(n_val, 1, rows - 1);
  ValidationSplit split;
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  if (cfg.validation == ValidationScheme::Random) {
    rng.shuffle(std::span<std::size_t>(order));
    split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
  } else {
    split.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    split.validation.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  }
  return split;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> rows, const TrainConfig& cfg,
                                                    num::Rng& rng) {
  std::vector<std::size_t> block_starts;
  for (std::size_t s = 0; s < rows.size(); s += cfg.sub_block) block_starts.push_back(s);
  rng.shuffle(std::span<std::size_t>(block_starts));
  const std::size_t per_batch = cfg.batch_size / cfg.sub_block;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < block_starts.size(); b += per_batch) {
    auto& batch = batches.emplace_back();
    for (std::size_t k = b; k < std::min(b + per_batch, block_starts.size()); ++k) {
      const std::size_t start = block_starts[k];
      for (std::size_t j = start; j < std::min(start + cfg.sub_block, rows.size()); ++j) batch.push_back(rows[j]);
    }
  }
  return batches;
}

namespace {

num::Matrix gather(const num::Matrix& m, std::span<const std::size_t> rows) {
  num::Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double validation_loss(const model::ModelParams& params, const data::WindowedDataset& val, const TrainConfig& cfg) {
  const auto& levels = model::common_of(params).config.levels;
  if (cfg.validation != ValidationScheme::SequentialFolds) {
    return pinball_value(val.targets, model::predict(params, val.inputs), levels);
  }
  // Average of per-fold losses over consecutive, near-equal segments.
  const std::size_t folds = std::min(cfg.folds, val.size());
  const num::Matrix q = model::predict(params, val.inputs);
  double total = 0.0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * val.size() / folds;
    const std::size_t hi = (f + 1) * val.size() / folds;
    std::vector<std::size_t> idx(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    total += pinball_value(gather(val.targets, idx), gather(q, idx), levels);
  }
  return total / static_cast<double>(folds);
}

struct StepOutcome {
  double loss;
  model::ModelParams grads;
};

StepOutcome train_step(const model::ModelParams& params, const num::Matrix& x, const num::Matrix& y, num::Rng& rng) {
  return std::visit(
      [&](const auto& p) -> StepOutcome {
        auto fw = model::forward(p, x, model::Mode::Train, &rng);
        auto pl = pinball_loss(y, fw.quantiles, p.common.config.levels);
        return {pl.loss, model::backward(p, fw.cache, pl.gradient)};
      },
      params);
}

}  // namespace

FitResult fit(const model::ModelConfig& config, const data::WindowedDataset& dataset, const TrainConfig& cfg,
              const FitHooks& hooks) {
  cfg.validate();
  config.validate();
  if (dataset.size() == 0) throw DataError("cannot fit on an empty dataset");

  num::Rng rng(cfg.seed);
  const ValidationSplit split = split_rows(dataset.size(), cfg, rng);
  const data::WindowedDataset train = data::select_rows(dataset, split.train);
  const data::WindowedDataset val = data::select_rows(dataset, split.validation);

  model::ModelParams params = model::init_model(config, train, cfg.dropout_rate, rng);
  model::ModelParams best = params;
  Adam adam(cfg.learning_rate);
  EarlyStopping stopper(cfg.patience);
  History history;
  std::vector<std::size_t> local(train.size());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double weighted = 0.0;
    for (const auto& batch : epoch_batches(local, cfg, rng)) {
      const num::Matrix x = gather(train.inputs, batch);
      const num::Matrix y = gather(train.targets, batch);
      auto [loss, grads] = train_step(params, x, y, rng);
      if (!std::isfinite(loss)) {
        throw NumericError("training loss diverged in epoch " + std::to_string(epoch) + "; last finite epoch " +
                           std::to_string(epoch - 1));
      }
      apply_gradients(adam, params, grads);
      weighted += loss * static_cast<double>(batch.size());
    }
    EpochRecord rec{epoch, weighted / static_cast<double>(train.size()), 0.0};
    std::optional<double> injected;
    if (hooks.validation_override) injected = hooks.validation_override(epoch);
    rec.val_loss = injected ? *injected : validation_loss(params, val, cfg);
    if (!std::isfinite(rec.val_loss) || !std::isfinite(rec.train_loss)) {
      throw NumericError("validation loss diverged in epoch " + std::to_string(epoch) + "; last finite epoch " +
                         std::to_string(epoch - 1));
    }
    history.epochs.push_back(rec);
    if (stopper.update(epoch, rec.val_loss)) best = params;
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec);
    if (stopper.should_stop()) {
      history.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best_loss();
  return {std::move(best), std::move(history)};
}

// ---------------------------------------------------------------------------

std::size_t GridSpec::cell_count() const {
  const std::size_t nz = basis_count.empty() ? 1 : basis_count.size();
  return hidden_units.size() * nz * learning_rate.size() * dropout_rate.size();
}

void GridSpec::validate() const {
  if (hidden_units.empty() || learning_rate.empty() || dropout_rate.empty())
    throw ConfigError("grid lists for hidden_units, learning_rate and dropout_rate must be non-empty");
}

GridSpec GridSpec::qrdnn_reference() {
  return {{64, 128, 512, 640, 768}, {}, {1e-3, 5e-4, 1e-4, 5e-5}, {0.0, 0.1, 0.3, 0.5}};
}

GridSpec GridSpec::qnbm_reference() {
  return {{32, 64, 128}, {32, 64, 128}, {1e-3, 5e-4, 1e-4, 5e-5}, {0.0, 0.1, 0.3, 0.5}};
}

GridResult grid_search(const model::ModelConfig& base_model, const data::WindowedDataset& dataset,
                       const TrainConfig& base_train, const GridSpec& grid) {
  grid.validate();
  GridResult result;
  for (std::size_t nu : grid.hidden_units) {
    const std::vector<std::size_t> nzs = grid.basis_count.empty() ? std::vector<std::size_t>{nu} : grid.basis_count;
    for (std::size_t nz : nzs) {
      for (double lr : grid.learning_rate) {
        for (double dr : grid.dropout_rate) {
          GridCell cell{base_model, base_train};
          cell.model.hidden_units = nu;
          cell.model.basis_count = nz;
          cell.train.learning_rate = lr;
          cell.train.dropout_rate = dr;
          try {
            cell.val_loss = fit(cell.model, dataset, cell.train).history.best_val_loss;
          } catch (const NumericError&) {
            cell.diverged = true;
          }
          result.cells.push_back(std::move(cell));
        }
      }
    }
  }
  for (std::size_t i = 1; i < result.cells.size(); ++i)
    if (result.cells[i].val_loss < result.cells[result.best].val_loss) result.best = i;
  return result;
}

ReferenceHyperparameters reference_hyperparameters(model::ModelKind kind, std::string_view market) {
  const bool qnbm = kind == model::ModelKind::Qnbm;
  if (market == "DE") return qnbm ? ReferenceHyperparameters{64, 5e-4, 0.1} : ReferenceHyperparameters{640, 1e-4, 0.1};
  if (market == "BE") return qnbm ? ReferenceHyperparameters{64, 5e-4, 0.3} : ReferenceHyperparameters{128, 5e-4, 0.1};
  throw ConfigError("no reference hyperparameters for market '" + std::string(market) + "'");
}

}  // namespace qnbm::train
