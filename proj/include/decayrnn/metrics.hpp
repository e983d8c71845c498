#pragma once

#include <vector>

#include "decayrnn/numeric.hpp"
#include "decayrnn/timeseries.hpp"

namespace decayrnn {

struct AucResult {
  double value = 0.5;
  bool valid = false;  // false when the labels contain a single class
};

/// Mann-Whitney AUC: (concordant pairs + 0.5 * tied pairs) / (n_pos * n_neg),
/// computed from average ranks in O(n log n). Labels > 0.5 are positive.
AucResult auc(const Vector& scores, const Vector& labels);

/// Per-output AUCs for a B x C probability matrix: one-vs-rest per class for
/// multiclass, per task otherwise.
std::vector<AucResult> output_aucs(const Matrix& probs, const std::vector<const Sample*>& samples, TaskMode mode);

/// Unweighted mean of the valid per-output AUCs (0.5 when none is valid).
double mean_auc(const std::vector<AucResult>& aucs);

}  // namespace decayrnn
