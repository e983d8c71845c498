#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decayrnn/numeric.hpp"

namespace decayrnn {

/// How labels map onto output units.
enum class TaskMode {
  Binary,      // one sigmoid unit
  Multiclass,  // softmax over n_classes units
  MultiTask,   // one independent sigmoid unit per task
};

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(const std::string& name);

/// One partially observed multivariate series on a (possibly irregular) grid.
///
/// `values` holds the NaN sentinel wherever `mask` is 0; `deltas[t][d]` is the
/// time since variable d was last observed strictly before step t.
struct Sample {
  std::string id;
  Vector timestamps;  // hours, strictly increasing
  Matrix values;      // T x D
  Matrix mask;        // T x D, entries in {0, 1}
  Matrix deltas;      // T x D, hours
  Vector label;       // class index (1 entry) or per-task binary targets

  Index steps() const { return values.rows(); }
  Index variables() const { return values.cols(); }
};

/// Per-variable affine normalization over observed entries.
struct NormStats {
  Vector mean;
  Vector std;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> variable_names;
  TaskMode task_mode = TaskMode::Binary;
  int n_classes = 2;  // Multiclass only
  std::vector<std::string> task_names;
  nlohmann::json metadata = nlohmann::json::object();

  Index variables() const { return static_cast<Index>(variable_names.size()); }
  /// Number of output units of a model trained on this dataset.
  int outputs() const;
  /// Integer label used for stratification (class index or first task).
  int stratum(std::size_t i) const;
};

/// Observations of one series before resampling: arbitrary timestamps, NaN for
/// variables absent from a reading.
struct RawSeries {
  std::string id;
  std::vector<double> timestamps;
  std::vector<std::vector<double>> readings;  // one row of D values per timestamp
};

Matrix compute_intervals(const Matrix& mask, const Vector& timestamps);

/// Builds a sample from timestamps and values (NaN = missing), deriving mask
/// and intervals.
Sample make_sample(std::string id, Vector timestamps, Matrix values, Vector label);

/// Means over observed entries of the given samples. Never-observed variables
/// get 0 and a warning on stderr.
Vector empirical_means(const Dataset& data, const std::vector<std::size_t>& indices);
Vector empirical_means(const Dataset& data);

/// Population statistics over observed entries of the given samples;
/// zero-variance variables get std 1 and a warning.
NormStats compute_norm_stats(const Dataset& data, const std::vector<std::size_t>& indices);

/// Applies (x - mean) / std to every observed entry of every sample.
void apply_normalization(Dataset& data, const NormStats& stats);

/// Computes statistics on `train_indices` and applies them to all samples.
NormStats normalize(Dataset& data, const std::vector<std::size_t>& train_indices);

Sample resample(const RawSeries& raw, double bin_hours, Vector label = Vector());

Vector missing_rate(const Sample& sample);

struct CorrelationEntry {
  std::string variable;
  std::string task;
  double pearson_r = 0.0;
  bool degenerate = false;  // zero variance in the missing rate
};

double pearson(const Vector& a, const Vector& b, bool* degenerate = nullptr);

/// Pearson r between each variable's per-sample missing rate and each task's
/// label.
std::vector<CorrelationEntry> missingness_label_correlation(const Dataset& data);

struct DatasetStats {
  std::size_t samples = 0;
  Index variables = 0;
  double mean_steps = 0.0;
  Index max_steps = 0;
  double mean_missing_rate = 0.0;
};

DatasetStats dataset_stats(const Dataset& data);
nlohmann::json to_json(const DatasetStats& stats);

struct SyntheticConfig {
  int n_samples = 378;
  int n_variables = 8;
  int n_classes = 5;
  double target_missing_rate = 0.5;
  double correlation_strength = 0.0;
  std::uint64_t seed = 0;
  int min_steps = 20;
  int max_steps = 31;
  /// Spread of the class-specific sinusoid parameters around a shared
  /// per-variable base; 0 makes values carry no class signal.
  double class_separation = 0.35;
  double noise_std = 0.1;
  /// Log-normal spread of a per-sample signal scale. Without it the energy of
  /// a mean-imputed series reveals its missing rate.
  double amplitude_jitter = 0.0;
};

nlohmann::json to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

/// Class-conditioned sinusoids with label-dependent Bernoulli missingness.
/// The label offset is calibrated by bisection against the measured
/// correlation; achieved rate and correlation are stored in metadata.
Dataset generate_synthetic(const SyntheticConfig& cfg);

/// Keeps the steps with timestamp <= cutoff_hours.
Sample truncate_prefix(const Sample& sample, double cutoff_hours);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// k disjoint test folds; 20% of each remaining training portion is carved off
/// (stratified) for validation.
std::vector<FoldSplit> kfold_split(const Dataset& data, int k, std::uint64_t seed, bool stratify);

/// Splits `indices` into (rest, held) with `fraction` of each stratum held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const Dataset& data, std::vector<std::size_t> indices, double fraction, Rng& rng);

/// Label-stratified subsample of `size` samples.
std::vector<std::size_t> stratified_subsample(const Dataset& data, std::size_t size,
                                              std::uint64_t seed);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// Wide CSV: `series_id,timestamp,<var1>,...` with empty cells for missing
// values, plus a labels CSV `series_id,<task1>,...`.
std::vector<RawSeries> read_wide_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* variable_names);

/// Reads a dataset whose timestamps are already the model's time grid.
Dataset read_dataset(const std::filesystem::path& data_csv,
                     const std::filesystem::path& labels_csv);

/// Reads raw readings and resamples each series into `bin_hours` bins.
Dataset ingest_dataset(const std::filesystem::path& data_csv,
                       const std::filesystem::path& labels_csv, double bin_hours);

std::string format_data_csv(const Dataset& data);
std::string format_labels_csv(const Dataset& data);

}  // namespace decayrnn
