#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decayrnn/cells.hpp"
#include "decayrnn/head.hpp"
#include "decayrnn/model.hpp"
#include "decayrnn/timeseries.hpp"

namespace decayrnn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 10;
  double head_dropout = 0.5;
  double recurrent_dropout = 0.3;
  double lambda = 1.0;  // GRU-IMP observed-entry NLL weight
  std::uint64_t seed = 0;
  bool batch_norm = true;
  double l2 = 0.0;  // logistic baseline only
  long long hidden = 0;        // explicit hidden size, or
  long long param_budget = 0;  // size from a parameter budget
  double decay_init_scale = 0.05;
  int threads = 1;
};

/// Throws ConfigError on out-of-range fields.
void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Worker count from DECAYRNN_THREADS (default 1).
int threads_from_env();

struct AdamState {
  Vector m, v;
  long long step = 0;
};

/// Bias-corrected Adam update in place. Throws NumericalError on a
/// non-finite gradient, leaving params and state untouched.
void adam_step(AdamState& state, Vector& params, const Vector& grads, const TrainConfig& cfg);

/// One Bernoulli(1 - rate) keep-mask per entry of W, U and V, scaled by
/// 1/(1 - rate). Rate 0 gives empty (identity) masks.
WeightMasks recurrent_dropout_masks(const CellParams& params, double rate, Rng& rng);

/// Tracks the best validation score; `patience` epochs without strict
/// improvement stop training.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Returns true when `score` is a new best.
  bool update(int epoch, double score);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_score_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_score_ = -1.0;
  int since_best_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double train_nll = 0.0;  // mean observed-entry NLL (GRU-IMP)
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_auc = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

/// Hidden size from cfg.hidden or cfg.param_budget (default 16).
Index resolve_hidden(CellKind kind, Index vars, Index outputs, const TrainConfig& cfg);

/// Trains on `normalized` (already normalized with `norm`, computed on the
/// training indices). Empirical means come from split.train.
TrainResult train(CellKind kind, const Dataset& normalized, const FoldSplit& split, const TrainConfig& cfg,
                  const NormStats& norm);

/// Normalizes a copy of `raw` with training-split statistics, then trains.
TrainResult fit(CellKind kind, const Dataset& raw, const FoldSplit& split, const TrainConfig& cfg);

std::string history_jsonl(const std::vector<EpochRecord>& history);

/// Mean loss over `indices` (eval phase, no dropout) and, for GRU-IMP, the
/// mean observed-entry NLL.
std::pair<double, double> evaluate_loss(const Model& model, const Dataset& normalized,
                                        const std::vector<std::size_t>& indices, double lambda);

struct GradientCheckDims {
  Index vars = 3;
  Index hidden = 4;
  Index steps = 5;
  Index outputs = 3;
  TaskMode task_mode = TaskMode::Multiclass;
};

struct GradientCheckReport {
  CellKind kind{};
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::string worst_block;
  Index parameters = 0;
  int redraws = 0;  // instances rejected for sitting near a rectifier kink
  /// |production loss - reference loss| at the unperturbed parameters.
  double reference_gap = 0.0;
  std::vector<std::pair<std::string, double>> per_block;
};

/// Compares BPTT + head gradients against central finite differences
/// (step 1e-5) of the full loss on a random instance. The differences are
/// taken on the extended-precision reference forward. Dropout is off, the
/// head runs in eval phase, GRU-IMP runs in train mode with frozen noise.
GradientCheckReport gradient_check(CellKind kind, const GradientCheckDims& dims, std::uint64_t seed,
                                   double lambda = 0.5);

// --- logistic-regression baseline -----------------------------------------

struct LogisticModel {
  TaskMode task_mode = TaskMode::Binary;
  double bin_hours = 1.0;
  Index bins = 0;
  Index vars = 0;
  bool with_masking = false;
  Matrix weight;  // C x F
  Vector bias;    // C
  NormStats norm;
};

/// Fixed-length features: values resampled into `bins` bins of `bin_hours`,
/// forward- then backward-filled (0 if never observed), optionally followed
/// by the flattened bin masks. Length bins * D * (1 or 2).
Vector logistic_features(const Sample& normalized, double bin_hours, Index bins, bool with_masking);

struct LogisticResult {
  LogisticModel model;
  std::vector<EpochRecord> history;
};

LogisticResult logistic_baseline(const Dataset& raw, const FoldSplit& split, double bin_hours, bool with_masking,
                                 const TrainConfig& cfg);

Matrix predict_logistic(const LogisticModel& model, const std::vector<const Sample*>& raw_samples);

}  // namespace decayrnn
