#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decayrnn/metrics.hpp"
#include "decayrnn/model.hpp"
#include "decayrnn/training.hpp"

namespace decayrnn {

/// Mean of the per-output AUCs of `model` on raw samples.
double evaluate_auc(const Model& model, const std::vector<const Sample*>& raw_samples);

struct FoldResult {
  int fold = 0;
  std::vector<AucResult> output_aucs;  // on the fold's test samples
  double auc = 0.0;                    // unweighted mean of valid outputs
  int best_epoch = 0;
  double best_val_auc = 0.0;
  int epochs_run = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct CvReport {
  CellKind kind{};
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> output_names;
  std::vector<FoldResult> fold_results;
  std::vector<double> output_mean, output_std;  // across folds; NaN if never valid
  double mean = 0.0;
  double std = 0.0;  // population std across folds
};

/// Trains one model per fold of a stratified k-fold split (normalization and
/// empirical means from each fold's training portion only) and scores it on
/// the held-out fold. k = 1 is a development mode: a single 20% stratified
/// test holdout. `models`, when given, receives the per-fold models.
CvReport cross_validate(CellKind kind, const Dataset& raw, const TrainConfig& cfg, int k,
                        std::vector<Model>* models = nullptr, std::vector<FoldSplit>* splits = nullptr);

/// The splits cross_validate uses for (data, k, seed).
std::vector<FoldSplit> cv_splits(const Dataset& data, int k, std::uint64_t seed);

nlohmann::json to_json(const CvReport& report);

struct OnlinePoint {
  double cutoff_hours = 0.0;
  double auc = 0.0;
  bool skipped = false;  // some sample had no step at or before the cutoff
};

/// Scores prefixes of each sample (steps with timestamp <= cutoff) through the
/// unchanged model.
std::vector<OnlinePoint> online_eval(const Model& model, const std::vector<const Sample*>& raw_samples,
                                     const std::vector<double>& cutoffs);

struct ScalingCell {
  CellKind kind{};
  std::size_t size = 0;
  double positive_rate = 0.0;  // share of stratum 1 (or the first class) in the subsample
  CvReport cv;
};

/// Label-stratified subsample per size, then cross_validate per kind. The full
/// size uses the dataset unchanged.
std::vector<ScalingCell> scaling_experiment(const std::vector<CellKind>& kinds, const Dataset& raw,
                                            const std::vector<std::size_t>& sizes, const TrainConfig& cfg, int k);

struct DecayCurve {
  std::string variable;
  std::vector<double> delta;
  std::vector<double> gamma;
};

struct HistogramBin {
  std::string variable;
  double lo = 0.0;
  double hi = 0.0;
  long long count = 0;
};

struct DecayReport {
  CellKind kind{};
  std::string curve_block;  // "gamma_x", "gamma_m", "gamma_imp" or empty
  std::vector<DecayCurve> curves;
  std::vector<HistogramBin> hidden_histogram;  // empty without hidden decay
};

/// Input-side decay curves over delta in [0, 24] hours at 0.25h steps, and a
/// histogram of each column of the hidden-decay matrix on shared bins.
/// Throws ConfigError for kinds without decay parameters.
DecayReport decay_report(const Model& model, int bins = 10);

nlohmann::json to_json(const DecayReport& report);

// Plot-ready CSV bodies. `config` is embedded as leading '#' lines.
std::string config_comment(const nlohmann::json& config);
std::string decay_curves_csv(const DecayReport& report, const nlohmann::json& config);
std::string hidden_decay_hist_csv(const DecayReport& report, const nlohmann::json& config);
std::string online_auc_csv(const std::vector<OnlinePoint>& points, const nlohmann::json& config);
std::string correlation_csv(const std::vector<CorrelationEntry>& entries, const nlohmann::json& config);

}  // namespace decayrnn
