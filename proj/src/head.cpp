#include "decayrnn/head.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace decayrnn {

Vector HeadParams::flatten() const {
  Vector flat(trainable_size());
  const Index c = bias.size();
  flat.head(weight.size()) = Eigen::Map<const Vector>(weight.data(), weight.size());
  flat.segment(weight.size(), c) = bias;
  flat.segment(weight.size() + c, c) = bn_scale;
  flat.segment(weight.size() + 2 * c, c) = bn_shift;
  return flat;
}

void HeadParams::unflatten(const Vector& flat) {
  if (flat.size() != trainable_size()) throw ArgumentError("HeadParams::unflatten: size mismatch");
  const Index c = bias.size();
  Eigen::Map<Vector>(weight.data(), weight.size()) = flat.head(weight.size());
  bias = flat.segment(weight.size(), c);
  bn_scale = flat.segment(weight.size() + c, c);
  bn_shift = flat.segment(weight.size() + 2 * c, c);
}

HeadParams init_head(Index hidden, Index outputs, Rng& rng) {
  HeadParams h;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  h.weight.resize(outputs, hidden);
  for (Index k = 0; k < h.weight.size(); ++k) h.weight.data()[k] = rng.uniform(-bound, bound);
  h.bias = Vector::Zero(outputs);
  h.bn_scale = Vector::Ones(outputs);
  h.bn_shift = Vector::Zero(outputs);
  h.running_mean = Vector::Zero(outputs);
  h.running_var = Vector::Ones(outputs);
  return h;
}

namespace {

Matrix activate(const Matrix& y, TaskMode mode) {
  Matrix probs(y.rows(), y.cols());
  for (Index n = 0; n < y.rows(); ++n) {
    if (mode == TaskMode::Multiclass) {
      probs.row(n) = softmax(y.row(n).transpose()).transpose();
    } else {
      probs.row(n) = sigmoid(y.row(n));
    }
  }
  return probs;
}

}  // namespace

Matrix head_forward(HeadParams& head, const Matrix& hidden, const HeadOptions& options, HeadCache* cache) {
  if (hidden.cols() != head.weight.cols()) throw ArgumentError("head_forward: hidden size does not match head");
  const bool train = options.phase == Phase::Train;

  Matrix input = hidden;
  Matrix drop;
  if (train && options.dropout_rate > 0.0) {
    if (!options.rng) throw ArgumentError("head_forward: dropout needs an rng");
    const double keep = 1.0 - options.dropout_rate;
    drop.resize(hidden.rows(), hidden.cols());
    for (Index k = 0; k < drop.size(); ++k) drop.data()[k] = options.rng->bernoulli(keep) / keep;
    input = input.cwiseProduct(drop);
  }

  Matrix logits = input * head.weight.transpose();
  logits.rowwise() += head.bias.transpose();

  Matrix y = logits;
  Matrix normalized;
  Vector inv_std;
  if (options.batch_norm) {
    Vector mean, var;
    if (train) {
      mean = logits.colwise().mean().transpose();
      var = (logits.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
      head.running_mean = options.bn_momentum * head.running_mean + (1.0 - options.bn_momentum) * mean;
      head.running_var = options.bn_momentum * head.running_var + (1.0 - options.bn_momentum) * var;
      ++head.bn_updates;
    } else {
      if (head.bn_updates == 0) {
        static bool warned = false;
        if (!warned) {
          std::cerr << "warning: batch-norm head evaluated before training; using initial running statistics\n";
          warned = true;
        }
      }
      mean = head.running_mean;
      var = head.running_var;
    }
    inv_std = (var.array() + options.bn_epsilon).rsqrt().matrix();
    normalized = (logits.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
    y = (normalized.array().rowwise() * head.bn_scale.transpose().array()).matrix();
    y.rowwise() += head.bn_shift.transpose();
  }

  Matrix probs = activate(y, options.task_mode);
  if (cache) {
    cache->input = std::move(input);
    cache->dropout_mask = std::move(drop);
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->probs = probs;
    cache->phase = options.phase;
    cache->batch_norm = options.batch_norm;
  }
  return probs;
}

Matrix head_predict(const HeadParams& head, const Matrix& hidden, TaskMode mode, bool batch_norm) {
  HeadParams copy = head;
  HeadOptions opts;
  opts.task_mode = mode;
  opts.phase = Phase::Eval;
  opts.batch_norm = batch_norm;
  return head_forward(copy, hidden, opts);
}

HeadGrads head_backward(const HeadParams& head, const HeadCache& cache, const Matrix& d_out) {
  const Index batch = d_out.rows();
  HeadGrads g;
  g.params.weight = Matrix::Zero(head.weight.rows(), head.weight.cols());
  g.params.bias = Vector::Zero(head.bias.size());
  g.params.bn_scale = Vector::Zero(head.bias.size());
  g.params.bn_shift = Vector::Zero(head.bias.size());

  Matrix d_logits = d_out;
  if (cache.batch_norm) {
    g.params.bn_shift = d_out.colwise().sum().transpose();
    g.params.bn_scale = d_out.cwiseProduct(cache.normalized).colwise().sum().transpose();
    const Matrix d_norm = d_out.array().rowwise() * head.bn_scale.transpose().array();
    if (cache.phase == Phase::Train) {
      const double b = static_cast<double>(batch);
      const Eigen::RowVectorXd sum_d = d_norm.colwise().sum();
      const Eigen::RowVectorXd sum_dn = d_norm.cwiseProduct(cache.normalized).colwise().sum();
      Matrix centered = (b * d_norm).rowwise() - sum_d;
      centered -= (cache.normalized.array().rowwise() * sum_dn.array()).matrix();
      d_logits = (centered.array().rowwise() * (cache.inv_std.transpose().array() / b)).matrix();
    } else {
      d_logits = d_norm.array().rowwise() * cache.inv_std.transpose().array();
    }
  }
  g.params.weight = d_logits.transpose() * cache.input;
  g.params.bias = d_logits.colwise().sum().transpose();
  g.hidden = d_logits * head.weight;
  if (cache.dropout_mask.size() > 0) g.hidden = g.hidden.cwiseProduct(cache.dropout_mask);
  return g;
}

Vector target_vector(const Vector& label, TaskMode mode, Index outputs) {
  if (mode == TaskMode::Multiclass) {
    const auto cls = static_cast<Index>(std::lround(label(0)));
    if (cls < 0 || cls >= outputs) throw ArgumentError("class label out of range");
    Vector t = Vector::Zero(outputs);
    t(cls) = 1.0;
    return t;
  }
  if (label.size() != outputs) throw ArgumentError("label length does not match output count");
  return label;
}

double loss(const Vector& probs, const Vector& label, TaskMode mode, double aux_nll, double lambda) {
  constexpr double kLo = 1e-12;
  constexpr double kHi = 1.0 - 1e-12;
  const Vector target = target_vector(label, mode, probs.size());
  double l = 0.0;
  for (Index k = 0; k < probs.size(); ++k) {
    const double p = std::clamp(probs(k), kLo, kHi);
    if (mode == TaskMode::Multiclass) {
      if (target(k) > 0.0) l -= std::log(p);
    } else {
      l -= target(k) * std::log(p) + (1.0 - target(k)) * std::log1p(-p);
    }
  }
  return l + lambda * aux_nll;
}

Vector loss_gradient(const Vector& probs, const Vector& label, TaskMode mode) {
  return probs - target_vector(label, mode, probs.size());
}

}  // namespace decayrnn
