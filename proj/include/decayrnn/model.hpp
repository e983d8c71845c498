#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decayrnn/cells.hpp"
#include "decayrnn/head.hpp"
#include "decayrnn/timeseries.hpp"

namespace decayrnn {

/// A trained recurrent classifier together with everything inference needs:
/// training-split empirical means and normalization statistics.
struct Model {
  CellKind kind = CellKind::GruD;
  TaskMode task_mode = TaskMode::Binary;
  Index vars = 0;
  Index hidden = 0;
  Index outputs = 1;
  bool batch_norm = true;
  CellParams cell;
  HeadParams head;
  Vector means;   // empirical means in normalized units
  NormStats norm; // applied to raw inputs before the cell
  std::vector<std::string> variable_names;
  nlohmann::json provenance = nlohmann::json::object();

  Vector flatten_trainable() const;
  void unflatten_trainable(const Vector& flat);
};

Model init_model(CellKind kind, Index vars, Index hidden, Index outputs, TaskMode mode, Rng& rng,
                 double decay_init_scale = 0.05);

/// Eval-phase probabilities for already-normalized samples (B x C).
Matrix predict_normalized(const Model& model, const std::vector<const Sample*>& samples);

/// Normalizes a raw sample with the model's stored statistics.
Sample normalize_sample(const Model& model, const Sample& raw);

/// Probabilities for raw (unnormalized) samples.
Matrix predict(const Model& model, const std::vector<const Sample*>& raw_samples);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace decayrnn
