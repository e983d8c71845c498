#pragma once

#include "decayrnn/numeric.hpp"
#include "decayrnn/timeseries.hpp"

namespace decayrnn {

/// Output layer on the last hidden state: affine map, per-unit batch norm,
/// then softmax or sigmoids.
struct HeadParams {
  Matrix weight;  // C x H
  Vector bias;    // C
  Vector bn_scale, bn_shift;
  Vector running_mean, running_var;
  long long bn_updates = 0;  // number of train-phase batches seen

  Index outputs() const { return weight.rows(); }
  /// Trainable values: weight, bias, bn_scale, bn_shift.
  Vector flatten() const;
  void unflatten(const Vector& flat);
  Index trainable_size() const { return weight.size() + 3 * bias.size(); }
};

HeadParams init_head(Index hidden, Index outputs, Rng& rng);

enum class Phase { Train, Eval };

struct HeadOptions {
  TaskMode task_mode = TaskMode::Binary;
  Phase phase = Phase::Eval;
  bool batch_norm = true;
  double dropout_rate = 0.5;  // applied to h_T in the train phase
  Rng* rng = nullptr;         // dropout draws; required when training with dropout
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
};

struct HeadCache {
  Matrix input;         // B x H after dropout
  Matrix dropout_mask;  // B x H (empty when no dropout)
  Matrix normalized;    // B x C, logits after centering/scaling (before scale/shift)
  Vector inv_std;       // C
  Matrix probs;         // B x C
  Phase phase = Phase::Eval;
  bool batch_norm = false;
};

/// Rows of `hidden` are samples. In the train phase batch statistics are used
/// and the running statistics of `head` are updated.
Matrix head_forward(HeadParams& head, const Matrix& hidden, const HeadOptions& options,
                    HeadCache* cache = nullptr);

/// Eval-phase forward that leaves `head` untouched.
Matrix head_predict(const HeadParams& head, const Matrix& hidden, TaskMode mode, bool batch_norm);

struct HeadGrads {
  HeadParams params;  // gradients in the trainable blocks
  Matrix hidden;      // B x H, dLoss/dh_T
};

/// `d_out` is dLoss/d(pre-activation output), B x C.
HeadGrads head_backward(const HeadParams& head, const HeadCache& cache, const Matrix& d_out);

/// Target vector for one sample: one-hot for multiclass, the label vector
/// otherwise.
Vector target_vector(const Vector& label, TaskMode mode, Index outputs);

/// Clamped cross-entropy (softmax) or summed binary cross-entropies, plus
/// lambda * aux_nll.
double loss(const Vector& probs, const Vector& label, TaskMode mode, double aux_nll = 0.0, double lambda = 0.0);

/// dLoss/d(pre-activation output) for one sample: probs - target.
Vector loss_gradient(const Vector& probs, const Vector& label, TaskMode mode);

}  // namespace decayrnn
