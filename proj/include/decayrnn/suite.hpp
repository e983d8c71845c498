#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decayrnn/evaluation.hpp"

namespace decayrnn {

/// Synthetic benchmark: one dataset per correlation strength at a shared
/// missing rate, cross-validated for every listed kind, plus an online
/// prediction curve for one (kind, strength) cell.
/// Benchmark data: moderate value signal (separation 0.08) and a wide per-sample
/// amplitude spread (jitter 1.0), so imputed values leak little about the
/// missing rate and the masking carries most of the label information as
/// the correlation grows.
SyntheticConfig suite_synthetic_defaults();
/// Adam at 1e-2 with batches of 16, patience 50 over at most 300 epochs,
/// hidden size 16 for every kind.
TrainConfig suite_train_defaults();

struct SuiteConfig {
  std::vector<CellKind> kinds{CellKind::GruMean, CellKind::GruForward, CellKind::GruSimple, CellKind::GruD};
  std::vector<double> correlations{0.0, 0.3, 0.6, 0.9};
  SyntheticConfig synthetic = suite_synthetic_defaults();  // correlation_strength is overridden per setting
  TrainConfig train = suite_train_defaults();
  int folds = 5;
  CellKind online_kind = CellKind::GruD;
  double online_correlation = 0.9;
  std::vector<double> online_fractions{0.25, 0.5, 0.75, 1.0};  // of the dataset horizon
};

nlohmann::json to_json(const SuiteConfig& cfg);
/// Unknown keys are rejected. "synthetic" and "train" override the suite
/// defaults field by field.
SuiteConfig suite_config_from_json(const nlohmann::json& j);

struct SuiteCell {
  CellKind kind{};
  double correlation = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  bool reused = false;  // loaded from a checksummed artifact instead of recomputed
};

struct SuiteResult {
  std::vector<SuiteCell> cells;
  std::vector<OnlinePoint> online;
  double online_full_auc = 0.0;  // same model and samples, no truncation
  std::vector<std::filesystem::path> artifacts;  // relative to the output directory
  int computed = 0;
};

/// Runs or resumes the suite under `out_dir`. A cell whose artifact exists
/// and matches the checksum recorded in manifest.json (for the same config)
/// is reused; rerunning a completed suite writes nothing.
SuiteResult run_suite(const SuiteConfig& cfg, const std::filesystem::path& out_dir);

const SuiteCell& find_cell(const SuiteResult& result, CellKind kind, double correlation);

}  // namespace decayrnn
