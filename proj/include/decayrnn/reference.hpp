#pragma once

// Loss-only forward pass written directly from the cell equations with
// scalar loops, kept independent of the cached production forward. It is the
// finite-difference oracle for gradient checks: instantiated with long double
// it keeps rounding far below the 1e-5 difference step.

#include <algorithm>
#include <cmath>

#include "decayrnn/cells.hpp"
#include "decayrnn/model.hpp"

namespace decayrnn::reference {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Scalar logistic(Scalar a) {
  using std::exp;
  return Scalar(1) / (Scalar(1) + exp(-a));
}

template <typename Scalar>
Scalar decay(Scalar pre) {
  using std::exp;
  return exp(-std::max(Scalar(0), pre));
}

/// Row `g` of a stacked gate block: sum_j A(g*H + i, j) * v(j).
template <typename Scalar>
Scalar gate_dot(const Mat<Scalar>& A, Index row, const Vec<Scalar>& v) {
  Scalar s(0);
  for (Index j = 0; j < v.size(); ++j) s += A(row, j) * v(j);
  return s;
}

/// Full loss of one sample: eval-phase head, no dropout. GRU-IMP imputes
/// mu + noise when `noise` is given and mu otherwise.
template <typename Scalar>
Scalar loss(const Model& model, const Sample& sample, const Matrix* noise, double lambda) {
  using std::log;
  using std::tanh;
  const CellTraits t = traits(model.kind);
  const CellParams& p = model.cell;
  const Index H = model.hidden;
  const Index D = model.vars;
  const Mat<Scalar> W = p.W.cast<Scalar>();
  const Mat<Scalar> U = p.U.cast<Scalar>();
  const Vec<Scalar> b = p.b.cast<Scalar>();
  const Mat<Scalar> V = p.V.cast<Scalar>();

  Vec<Scalar> h = Vec<Scalar>::Zero(H);
  Vec<Scalar> c = Vec<Scalar>::Zero(H);
  Vec<Scalar> x_last = model.means.cast<Scalar>();
  Scalar log_density(0);

  for (Index s = 0; s < sample.steps(); ++s) {
    Vec<Scalar> x(D);
    for (Index d = 0; d < D; ++d) {
      const bool obs = sample.mask(s, d) > 0.5;
      const Scalar delta = sample.deltas(s, d);
      Scalar value = obs ? Scalar(sample.values(s, d)) : Scalar(0);
      switch (t.input) {
        case InputRule::Mean:
          if (!obs) value = model.means(d);
          break;
        case InputRule::Forward:
          if (!obs) value = x_last(d);
          break;
        case InputRule::DecayToMean:
          if (!obs) {
            const Scalar g = decay(Scalar(p.w_decay_x(d)) * delta + Scalar(p.b_decay_x(d)));
            value = g * x_last(d) + (Scalar(1) - g) * Scalar(model.means(d));
          }
          break;
        case InputRule::Imputation: {
          const Scalar g = decay(Scalar(p.w_decay_imp(d)) * delta + Scalar(p.b_decay_imp(d)));
          Scalar proj(p.b_impute(d));
          for (Index j = 0; j < H; ++j) proj += Scalar(p.W_impute(d, j)) * h(j);
          const Scalar mu = g * proj;
          if (!obs) value = noise ? mu + Scalar((*noise)(s, d)) : mu;
          break;
        }
      }
      x(d) = value;
    }

    if (t.input == InputRule::Imputation) {
      Scalar sum(0);
      int count = 0;
      for (Index d = 0; d < D; ++d) {
        if (sample.mask(s, d) <= 0.5) continue;
        Scalar proj(p.b_impute(d));
        for (Index j = 0; j < H; ++j) proj += Scalar(p.W_impute(d, j)) * h(j);
        const Scalar mu =
            decay(Scalar(p.w_decay_imp(d)) * Scalar(sample.deltas(s, d)) + Scalar(p.b_decay_imp(d))) * proj;
        const Scalar r = x(d) - mu;
        sum += -Scalar(0.5) * log(Scalar(2) * Scalar(3.14159265358979323846264338327950288L)) - Scalar(0.5) * r * r;
        ++count;
      }
      if (count > 0) log_density += sum / Scalar(count);
    }

    // Gate input.
    Vec<Scalar> in = x;
    if (t.appends_mask || t.appends_interval) {
      in.resize(t.input_size(D));
      Index k = 0;
      for (Index d = 0; d < D; ++d) in(k++) = x(d);
      if (t.appends_mask) {
        for (Index d = 0; d < D; ++d) in(k++) = sample.mask(s, d);
      }
      if (t.appends_interval) {
        for (Index d = 0; d < D; ++d) in(k++) = sample.deltas(s, d);
      }
    }

    Vec<Scalar> m_feed(D);
    for (Index d = 0; d < D; ++d) {
      const Scalar m = sample.mask(s, d);
      m_feed(d) = m;
      if (t.mask_decay) {
        const Scalar g = decay(Scalar(p.w_decay_m(d)) * Scalar(sample.deltas(s, d)) + Scalar(p.b_decay_m(d)));
        m_feed(d) = m + (Scalar(1) - m) * g;
      }
    }

    Vec<Scalar> hd = h;
    if (t.hidden_decay) {
      for (Index i = 0; i < H; ++i) {
        Scalar pre(p.b_decay_h(i));
        for (Index d = 0; d < D; ++d) pre += Scalar(p.W_decay_h(i, d)) * Scalar(sample.deltas(s, d));
        hd(i) = decay(pre) * h(i);
      }
    }

    Vec<Scalar> next(H);
    if (t.lstm) {
      for (Index i = 0; i < H; ++i) {
        auto pre = [&](Index g) { return gate_dot(W, g * H + i, in) + gate_dot(U, g * H + i, h) + b(g * H + i); };
        const Scalar gi = logistic(pre(0));
        const Scalar gf = logistic(pre(1));
        const Scalar go = logistic(pre(2));
        const Scalar gg = tanh(pre(3));
        c(i) = gf * c(i) + gi * gg;
        next(i) = go * tanh(c(i));
      }
    } else {
      Vec<Scalar> z(H), r(H);
      for (Index i = 0; i < H; ++i) {
        Scalar az = gate_dot(W, i, in) + gate_dot(U, i, hd) + b(i);
        Scalar ar = gate_dot(W, H + i, in) + gate_dot(U, H + i, hd) + b(H + i);
        if (t.feeds_mask) {
          az += gate_dot(V, i, m_feed);
          ar += gate_dot(V, H + i, m_feed);
        }
        z(i) = logistic(az);
        r(i) = logistic(ar);
      }
      const Vec<Scalar> rh = r.cwiseProduct(hd);
      for (Index i = 0; i < H; ++i) {
        Scalar a = gate_dot(W, 2 * H + i, in) + gate_dot(U, 2 * H + i, rh) + b(2 * H + i);
        if (t.feeds_mask) a += gate_dot(V, 2 * H + i, m_feed);
        next(i) = (Scalar(1) - z(i)) * hd(i) + z(i) * tanh(a);
      }
    }
    h = next;
    for (Index d = 0; d < D; ++d) {
      if (sample.mask(s, d) > 0.5) x_last(d) = sample.values(s, d);
    }
  }

  // Head: affine, running-statistics batch norm, then softmax or sigmoids.
  const HeadParams& hp = model.head;
  const Index C = model.outputs;
  Vec<Scalar> y(C);
  for (Index k = 0; k < C; ++k) {
    Scalar a(hp.bias(k));
    for (Index i = 0; i < H; ++i) a += Scalar(hp.weight(k, i)) * h(i);
    if (model.batch_norm) {
      using std::sqrt;
      a = (a - Scalar(hp.running_mean(k))) / sqrt(Scalar(hp.running_var(k)) + Scalar(1e-5));
      a = a * Scalar(hp.bn_scale(k)) + Scalar(hp.bn_shift(k));
    }
    y(k) = a;
  }
  const Scalar lo(1e-12);
  const Scalar hi = Scalar(1) - lo;
  Scalar total(0);
  if (model.task_mode == TaskMode::Multiclass) {
    const Scalar top = y.maxCoeff();
    Scalar z(0);
    for (Index k = 0; k < C; ++k) z += std::exp(y(k) - top);
    const auto cls = static_cast<Index>(std::lround(sample.label(0)));
    total = -log(std::clamp(std::exp(y(cls) - top) / z, lo, hi));
  } else {
    for (Index k = 0; k < C; ++k) {
      const Scalar prob = std::clamp(logistic(y(k)), lo, hi);
      const Scalar target = sample.label(k);
      total -= target * log(prob) + (Scalar(1) - target) * log(Scalar(1) - prob);
    }
  }
  if (t.input == InputRule::Imputation) total += Scalar(lambda) * (-log_density / Scalar(sample.steps()));
  return total;
}

}  // namespace decayrnn::reference
