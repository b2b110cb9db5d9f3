#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/matrix.hpp"
#include "qnbm/model.hpp"

namespace qnbm::train {

// ---------------------------------------------------------------------------
// Objective

/// Pinball loss of one (target, quantile) pair. Ties (y == q) take the
/// y ≤ q branch.
double pinball(double y, double q, double level);

struct PinballResult {
  double loss = 0.0;
  num::Matrix gradient;  // d(loss)/dq, same shape as q
};

/// Mean pinball loss over every (row, h, γ). `targets` is rows × H and
/// `quantiles` rows × (H·|Γ|) with column h·|Γ| + g. ParameterError when a
/// level is outside (0, 1), ShapeError when the shapes disagree.
PinballResult pinball_loss(const num::Matrix& targets, const num::Matrix& quantiles, std::span<const double> levels);
double pinball_value(const num::Matrix& targets, const num::Matrix& quantiles, std::span<const double> levels);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are created on the first step and
/// tied to the tensor order of that step.
class Adam {
 public:
  explicit Adam(double learning_rate, AdamOptions options = {});

  /// Updates `params` in place. NumericError naming the tensor when a
  /// gradient entry is not finite (parameters are left untouched).
  void step(std::span<const model::NamedTensor> params, std::span<const model::ConstNamedTensor> grads);

  std::size_t steps() const noexcept { return step_; }
  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  AdamOptions options_;
  std::size_t step_ = 0;
  std::vector<num::Matrix> m_;
  std::vector<num::Matrix> v_;
};

/// One Adam update of every trainable tensor; bumps the parameter revision.
void apply_gradients(Adam& adam, model::ModelParams& params, const model::ModelParams& grads);

// ---------------------------------------------------------------------------
// Early stopping

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records the validation loss of `epoch`; true when it is a new strict minimum.
  bool update(std::size_t epoch, double loss);
  /// True once `patience` epochs have passed without a new minimum.
  bool should_stop() const noexcept { return seen_ && since_best_ >= patience_; }

  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }

 private:
  std::size_t patience_;
  bool seen_ = false;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Fitting

enum class ValidationScheme {
  /// Seeded random subsample of the rows.
  Random,
  /// The most recent rows, split into `folds` consecutive segments whose
  /// losses are averaged.
  SequentialFolds,
};

struct TrainConfig {
  double learning_rate = 5e-4;
  double dropout_rate = 0.1;
  std::size_t max_epochs = 800;
  std::size_t patience = 20;
  std::size_t batch_size = 128;
  std::size_t sub_block = 32;
  double validation_fraction = 0.20;
  std::uint64_t seed = 0;
  ValidationScheme validation = ValidationScheme::Random;
  std::size_t folds = 4;

  /// ConfigError on out-of-range values.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

void write_history_csv(const History& history, std::ostream& out);
void save_history_csv(const History& history, const std::filesystem::path& path);

struct FitHooks {
  /// When set and returning a value, replaces the measured validation loss
  /// of that epoch.
  std::function<std::optional<double>(std::size_t epoch)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch_end;
};

struct FitResult {
  model::ModelParams params;
  History history;
};

/// Trains from a fresh initialization and returns the parameters of the best
/// validation epoch. NumericError when a loss turns non-finite.
FitResult fit(const model::ModelConfig& config, const data::WindowedDataset& dataset, const TrainConfig& cfg,
              const FitHooks& hooks = {});

/// Row indices used for training and validation by `fit`, each ascending.
struct ValidationSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

ValidationSplit split_rows(std::size_t rows, const TrainConfig& cfg, num::Rng& rng);

/// Training rows of one epoch grouped into batches of contiguous sub-blocks.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> rows, const TrainConfig& cfg,
                                                    num::Rng& rng);

// ---------------------------------------------------------------------------
// Grid search

struct GridSpec {
  std::vector<std::size_t> hidden_units;
  std::vector<std::size_t> basis_count;  // QNBM only; tied to hidden_units when empty
  std::vector<double> learning_rate;
  std::vector<double> dropout_rate;

  std::size_t cell_count() const;
  void validate() const;

  /// Reference candidate sets for QR-DNN and QNBM tuning.
  static GridSpec qrdnn_reference();
  static GridSpec qnbm_reference();
};

struct GridCell {
  model::ModelConfig model;
  TrainConfig train;
  double val_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

struct GridResult {
  std::vector<GridCell> cells;  // enumeration order
  std::size_t best = 0;

  const GridCell& best_cell() const { return cells.at(best); }
};

/// Fits every cell with the same seed; the lowest validation loss wins and
/// ties go to the earlier cell. Diverged cells score +inf.
GridResult grid_search(const model::ModelConfig& base_model, const data::WindowedDataset& dataset,
                       const TrainConfig& base_train, const GridSpec& grid);

struct ReferenceHyperparameters {
  std::size_t hidden_units;
  double learning_rate;
  double dropout_rate;
};

/// Tuned settings reported for the German ("DE") and Belgian ("BE") markets.
/// ConfigError for other markets.
ReferenceHyperparameters reference_hyperparameters(model::ModelKind kind, std::string_view market);

}  // namespace qnbm::train
