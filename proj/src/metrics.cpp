#include "decayrnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace decayrnn {

AucResult auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auc: scores and labels differ in length");
  const Index n = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) < scores(b); });

  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && scores(order[j + 1]) == scores(order[i])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) {
      if (labels(order[k]) > 0.5) {
        rank_sum += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return {std::nan(""), false};
  return {(rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg), true};
}

std::vector<AucResult> output_aucs(const Matrix& probs, const std::vector<const Sample*>& samples, TaskMode mode) {
  if (probs.rows() != static_cast<Index>(samples.size())) throw ArgumentError("output_aucs: row count mismatch");
  std::vector<AucResult> out;
  for (Index k = 0; k < probs.cols(); ++k) {
    Vector labels(probs.rows());
    for (Index n = 0; n < probs.rows(); ++n) {
      const Vector& label = samples[static_cast<std::size_t>(n)]->label;
      labels(n) = mode == TaskMode::Multiclass ? (std::lround(label(0)) == k ? 1.0 : 0.0) : label(k);
    }
    out.push_back(auc(probs.col(k), labels));
  }
  return out;
}

double mean_auc(const std::vector<AucResult>& aucs) {
  double sum = 0.0;
  int count = 0;
  for (const auto& a : aucs) {
    if (a.valid) {
      sum += a.value;
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.5;
}

}  // namespace decayrnn
