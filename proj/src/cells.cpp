#include "decayrnn/cells.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace decayrnn {

namespace {

struct KindName {
  CellKind kind;
  const char* canonical;
  const char* cli;
};

constexpr KindName kKindNames[] = {
    {CellKind::GruMean, "GRU-Mean", "gru-mean"},
    {CellKind::GruForward, "GRU-Forward", "gru-forward"},
    {CellKind::GruSimple, "GRU-Simple", "gru-simple"},
    {CellKind::GruSimpleMaskOnly, "GRU-SimpleMaskOnly", "gru-simple-mask"},
    {CellKind::GruSimpleIntervalOnly, "GRU-SimpleIntervalOnly", "gru-simple-interval"},
    {CellKind::GruD, "GRU-D", "grud"},
    {CellKind::GruDI, "GRU-DI", "grud-i"},
    {CellKind::GruDS, "GRU-DS", "grud-s"},
    {CellKind::GruDM, "GRU-DM", "grud-m"},
    {CellKind::GruImp, "GRU-IMP", "gru-imp"},
    {CellKind::LstmMean, "LSTM-Mean", "lstm-mean"},
};

std::string normalize_name(std::string s) {
  std::string out;
  for (char ch : s) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

}  // namespace

std::string to_string(CellKind kind) {
  for (const auto& k : kKindNames) {
    if (k.kind == kind) return k.canonical;
  }
  throw ArgumentError("unknown cell kind");
}

std::string cli_name(CellKind kind) {
  for (const auto& k : kKindNames) {
    if (k.kind == kind) return k.cli;
  }
  throw ArgumentError("unknown cell kind");
}

CellKind cell_kind_from_string(const std::string& name) {
  const std::string key = normalize_name(name);
  for (const auto& k : kKindNames) {
    if (key == normalize_name(k.canonical) || key == normalize_name(k.cli)) return k.kind;
  }
  throw ArgumentError("unknown cell kind: " + name);
}

const std::vector<CellKind>& all_cell_kinds() {
  static const std::vector<CellKind> kinds = [] {
    std::vector<CellKind> v;
    for (const auto& k : kKindNames) v.push_back(k.kind);
    return v;
  }();
  return kinds;
}

bool CellTraits::has_decay() const {
  return input_decay || hidden_decay || mask_decay || input == InputRule::Imputation;
}

CellTraits traits(CellKind kind) {
  CellTraits t;
  switch (kind) {
    case CellKind::GruMean:
      break;
    case CellKind::GruForward:
      t.input = InputRule::Forward;
      break;
    case CellKind::GruSimple:
      t.appends_mask = t.appends_interval = true;
      break;
    case CellKind::GruSimpleMaskOnly:
      t.appends_mask = true;
      break;
    case CellKind::GruSimpleIntervalOnly:
      t.appends_interval = true;
      break;
    case CellKind::GruD:
      t.input = InputRule::DecayToMean;
      t.feeds_mask = t.input_decay = t.hidden_decay = true;
      break;
    case CellKind::GruDI:
      t.input = InputRule::DecayToMean;
      t.feeds_mask = t.input_decay = true;
      break;
    case CellKind::GruDS:
      t.input = InputRule::Forward;
      t.feeds_mask = t.hidden_decay = true;
      break;
    case CellKind::GruDM:
      t.input = InputRule::Forward;
      t.feeds_mask = t.mask_decay = true;
      break;
    case CellKind::GruImp:
      t.input = InputRule::Imputation;
      break;
    case CellKind::LstmMean:
      t.lstm = true;
      break;
  }
  return t;
}

// ---------------------------------------------------------------------------
// CellParams

Index CellParams::size() const {
  Index n = 0;
  visit([&](const char*, const auto& block) { n += block.size(); });
  return n;
}

Vector CellParams::flatten() const {
  Vector flat(size());
  Index offset = 0;
  visit([&](const char*, const auto& block) {
    flat.segment(offset, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    offset += block.size();
  });
  return flat;
}

void CellParams::unflatten(const Vector& flat) {
  if (flat.size() != size()) throw ArgumentError("unflatten: size mismatch");
  Index offset = 0;
  visit([&](const char*, auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) = flat.segment(offset, block.size());
    offset += block.size();
  });
}

CellParams CellParams::zeros_like() const {
  CellParams out = *this;
  out.visit([](const char*, auto& block) { block.setZero(); });
  return out;
}

CellParams init_cell_params(CellKind kind, Index vars, Index hidden, Rng& rng, double decay_init_scale) {
  if (vars <= 0 || hidden <= 0) throw ArgumentError("init_cell_params: dimensions must be positive");
  const CellTraits t = traits(kind);
  const Index din = t.input_size(vars);
  const Index gates = t.gates();
  auto uniform_matrix = [&](Index rows, Index cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(lo, hi);
    return m;
  };
  auto gate_matrix = [&](Index rows, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return uniform_matrix(rows, fan_in, -bound, bound);
  };
  auto decay_vector = [&](Index n) -> Vector { return uniform_matrix(n, 1, 0.0, decay_init_scale); };

  CellParams p;
  p.W = gate_matrix(gates * hidden, din);
  p.U = gate_matrix(gates * hidden, hidden);
  p.b = Vector::Zero(gates * hidden);
  // Missingness inputs start with zero weight: training grows them only as
  // far as they help, instead of starting from random noise injected at every step.
  if (t.appends_mask || t.appends_interval) p.W.rightCols(din - vars).setZero();
  if (t.feeds_mask) p.V = Matrix::Zero(3 * hidden, vars);
  if (t.input_decay) {
    p.w_decay_x = decay_vector(vars);
    p.b_decay_x = Vector::Zero(vars);
  }
  if (t.hidden_decay) {
    p.W_decay_h = uniform_matrix(hidden, vars, 0.0, decay_init_scale);
    p.b_decay_h = Vector::Zero(hidden);
  }
  if (t.mask_decay) {
    p.w_decay_m = decay_vector(vars);
    p.b_decay_m = Vector::Zero(vars);
  }
  if (t.input == InputRule::Imputation) {
    p.W_impute = gate_matrix(vars, hidden);
    p.b_impute = Vector::Zero(vars);
    p.w_decay_imp = decay_vector(vars);
    p.b_decay_imp = Vector::Zero(vars);
  }
  return p;
}

void check_shapes(CellKind kind, const CellParams& p, Index vars) {
  const CellTraits t = traits(kind);
  const Index hidden = p.hidden();
  auto expect = [&](const char* name, const auto& block, Index rows, Index cols) {
    if (block.rows() != rows || block.cols() != cols) {
      throw ArgumentError(std::string("parameter block ") + name + " of " + to_string(kind) + " is " +
                          std::to_string(block.rows()) + "x" + std::to_string(block.cols()) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  };
  const Index gh = t.gates() * hidden;
  const Index zero = 0;
  expect("W", p.W, gh, t.input_size(vars));
  expect("U", p.U, gh, hidden);
  expect("b", p.b, gh, 1);
  expect("V", p.V, t.feeds_mask ? 3 * hidden : zero, t.feeds_mask ? vars : zero);
  const bool imp = t.input == InputRule::Imputation;
  expect("w_decay_x", p.w_decay_x, t.input_decay ? vars : zero, 1);
  expect("b_decay_x", p.b_decay_x, t.input_decay ? vars : zero, 1);
  expect("W_decay_h", p.W_decay_h, t.hidden_decay ? hidden : zero, t.hidden_decay ? vars : zero);
  expect("b_decay_h", p.b_decay_h, t.hidden_decay ? hidden : zero, 1);
  expect("w_decay_m", p.w_decay_m, t.mask_decay ? vars : zero, 1);
  expect("b_decay_m", p.b_decay_m, t.mask_decay ? vars : zero, 1);
  expect("W_impute", p.W_impute, imp ? vars : zero, imp ? hidden : zero);
  expect("b_impute", p.b_impute, imp ? vars : zero, 1);
  expect("w_decay_imp", p.w_decay_imp, imp ? vars : zero, 1);
  expect("b_decay_imp", p.b_decay_imp, imp ? vars : zero, 1);
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

void require_same_length(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size()) throw ArgumentError(std::string(what) + ": length mismatch");
}

Vector observed_or(const Vector& x, const Vector& m, const Vector& fallback) {
  Vector out(x.size());
  for (Index d = 0; d < x.size(); ++d) out(d) = m(d) > 0.5 ? x(d) : fallback(d);
  return out;
}

Vector exp_neg_relu(const Vector& pre) {
  return pre.unaryExpr([](double a) { return std::exp(-std::max(0.0, a)); });
}

/// d gamma / d pre-activation, with the subgradient at 0 taken as 0.
Vector decay_backward(const Vector& d_gamma, const Vector& gamma, const Vector& pre) {
  Vector out(pre.size());
  for (Index k = 0; k < pre.size(); ++k) out(k) = pre(k) > 0.0 ? -d_gamma(k) * gamma(k) : 0.0;
  return out;
}

constexpr double kHalfLogTwoPi = 0.91893853320467274178;

}  // namespace

Vector impute_mean(const Vector& x, const Vector& m, const Vector& means) {
  require_same_length(x, m, "impute_mean");
  require_same_length(x, means, "impute_mean");
  return observed_or(x, m, means);
}

Vector impute_forward(const Vector& x, const Vector& m, const Vector& x_last) {
  require_same_length(x, m, "impute_forward");
  require_same_length(x, x_last, "impute_forward");
  return observed_or(x, m, x_last);
}

Vector build_simple_input(const Vector& x_imputed, const Vector& m, const Vector& delta, CellKind kind) {
  const CellTraits t = traits(kind);
  if (!t.appends_mask && !t.appends_interval) {
    throw ArgumentError("build_simple_input: " + to_string(kind) + " is not a GRU-Simple variant");
  }
  const Index vars = x_imputed.size();
  Vector out(t.input_size(vars));
  out.head(vars) = x_imputed;
  Index offset = vars;
  if (t.appends_mask) {
    out.segment(offset, vars) = m;
    offset += vars;
  }
  if (t.appends_interval) out.segment(offset, vars) = delta;
  return out;
}

Vector decay_rate(const Vector& w, const Vector& b, const Vector& delta) {
  require_same_length(w, delta, "decay_rate");
  require_same_length(w, b, "decay_rate");
  return exp_neg_relu(w.cwiseProduct(delta) + b);
}

Vector decay_rate(const Matrix& W, const Vector& b, const Vector& delta) {
  return exp_neg_relu(matvec(W, delta) + b);
}

Vector decay_input(const Vector& x, const Vector& m, const Vector& x_last, const Vector& means,
                   const Vector& gamma_x) {
  require_same_length(x, gamma_x, "decay_input");
  const Vector blended = gamma_x.cwiseProduct(x_last) + (1.0 - gamma_x.array()).matrix().cwiseProduct(means);
  return observed_or(x, m, blended);
}

Vector decay_hidden(const Vector& h_prev, const Vector& gamma_h) {
  require_same_length(h_prev, gamma_h, "decay_hidden");
  return h_prev.cwiseProduct(gamma_h);
}

Vector decay_mask(const Vector& m, const Vector& gamma_m) {
  require_same_length(m, gamma_m, "decay_mask");
  return (m.array() + (1.0 - m.array()) * gamma_m.array()).matrix();
}

double masked_log_density(const Vector& x, const Vector& m, const Vector& mu) {
  double sum = 0.0;
  double count = 0.0;
  for (Index d = 0; d < x.size(); ++d) {
    if (m(d) > 0.5) {
      const double r = x(d) - mu(d);
      sum += -kHalfLogTwoPi - 0.5 * r * r;
      count += 1.0;
    }
  }
  return count > 0.0 ? sum / count : 0.0;
}

StepState initial_state(CellKind kind, Index hidden, const Vector& means) {
  StepState s;
  s.h = Vector::Zero(hidden);
  s.x_last = means;
  if (traits(kind).lstm) s.c = Vector::Zero(hidden);
  return s;
}

Vector gru_step(const CellParams& p, const Vector& h_prev, const Vector& x_in, const Vector* m_feed,
                StepCache* cache) {
  const Index hidden = p.hidden();
  if (p.W.rows() != 3 * hidden) throw ArgumentError("gru_step: gate blocks are not GRU-shaped");
  if (p.W.cols() != x_in.size()) throw ArgumentError("gru_step: input length does not match W");
  if (h_prev.size() != hidden) throw ArgumentError("gru_step: hidden length does not match U");
  if (m_feed && p.V.cols() != m_feed->size()) throw ArgumentError("gru_step: masking length does not match V");

  Vector a_zr = p.W.topRows(2 * hidden) * x_in + p.U.topRows(2 * hidden) * h_prev + p.b.head(2 * hidden);
  if (m_feed) a_zr.noalias() += p.V.topRows(2 * hidden) * *m_feed;
  const Vector z = sigmoid(a_zr.head(hidden));
  const Vector r = sigmoid(a_zr.tail(hidden));
  Vector a_c = p.W.bottomRows(hidden) * x_in + p.U.bottomRows(hidden) * r.cwiseProduct(h_prev) + p.b.tail(hidden);
  if (m_feed) a_c.noalias() += p.V.bottomRows(hidden) * *m_feed;
  const Vector cand = a_c.array().tanh().matrix();
  Vector h = (1.0 - z.array()) * h_prev.array() + z.array() * cand.array();
  if (cache) {
    cache->x_in = x_in;
    cache->h_dec = h_prev;
    cache->z = z;
    cache->r = r;
    cache->cand = cand;
    if (m_feed) cache->m_feed = *m_feed;
  }
  return h;
}

namespace {

Vector lstm_step(const CellParams& p, StepState& state, const Vector& x_in, StepCache* cache) {
  const Index hidden = p.hidden();
  const Vector a = p.W * x_in + p.U * state.h + p.b;
  const Vector gi = sigmoid(a.segment(0, hidden));
  const Vector gf = sigmoid(a.segment(hidden, hidden));
  const Vector go = sigmoid(a.segment(2 * hidden, hidden));
  const Vector gg = a.segment(3 * hidden, hidden).array().tanh().matrix();
  const Vector c = gf.cwiseProduct(state.c) + gi.cwiseProduct(gg);
  const Vector tanh_c = c.array().tanh().matrix();
  if (cache) {
    cache->x_in = x_in;
    cache->gate_i = gi;
    cache->gate_f = gf;
    cache->gate_o = go;
    cache->cand = gg;
    cache->c_prev = state.c;
    cache->c = c;
    cache->tanh_c = tanh_c;
  }
  state.c = c;
  return go.cwiseProduct(tanh_c);
}

void update_last_observed(StepState& state, const Vector& x, const Vector& m) {
  for (Index d = 0; d < x.size(); ++d) {
    if (m(d) > 0.5) state.x_last(d) = x(d);
  }
}

/// Advances any kind by one step. Returns the step's masked log-density for
/// GRU-IMP and 0 otherwise.
double advance(CellKind kind, const CellParams& p, StepState& state, const Vector& x, const Vector& m,
               const Vector& delta, const Vector& means, Mode mode, const Vector* noise, StepCache* cache) {
  const CellTraits t = traits(kind);
  if (cache) {
    cache->mask = m;
    cache->delta = delta;
    cache->h_prev = state.h;
  }
  double log_density = 0.0;
  Vector x_in;
  switch (t.input) {
    case InputRule::Mean:
      x_in = impute_mean(x, m, means);
      if (t.appends_mask || t.appends_interval) x_in = build_simple_input(x_in, m, delta, kind);
      break;
    case InputRule::Forward:
      x_in = impute_forward(x, m, state.x_last);
      break;
    case InputRule::DecayToMean: {
      const Vector pre = p.w_decay_x.cwiseProduct(delta) + p.b_decay_x;
      const Vector gamma = exp_neg_relu(pre);
      x_in = decay_input(x, m, state.x_last, means, gamma);
      if (cache) {
        cache->pre_x = pre;
        cache->gamma_x = gamma;
        cache->x_last = state.x_last;
        cache->means = means;
      }
      break;
    }
    case InputRule::Imputation: {
      const Vector pre = p.w_decay_imp.cwiseProduct(delta) + p.b_decay_imp;
      const Vector gamma = exp_neg_relu(pre);
      const Vector proj = p.W_impute * state.h + p.b_impute;
      const Vector mu = gamma.cwiseProduct(proj);
      Vector fill = mu;
      if (mode == Mode::Train) {
        if (!noise || noise->size() != mu.size()) throw ArgumentError("GRU-IMP train mode needs a noise row of length D");
        fill += *noise;
      }
      x_in = observed_or(x, m, fill);
      log_density = masked_log_density(x, m, mu);
      if (cache) {
        cache->pre_imp = pre;
        cache->gamma_imp = gamma;
        cache->proj = proj;
        cache->mu = mu;
        cache->residual = Vector::Zero(mu.size());
        cache->observed = m.sum();
        for (Index d = 0; d < mu.size(); ++d) {
          if (m(d) > 0.5) cache->residual(d) = x(d) - mu(d);
        }
      }
      break;
    }
  }

  Vector h_dec = state.h;
  if (t.hidden_decay) {
    const Vector pre = p.W_decay_h * delta + p.b_decay_h;
    const Vector gamma = exp_neg_relu(pre);
    h_dec = decay_hidden(state.h, gamma);
    if (cache) {
      cache->pre_h = pre;
      cache->gamma_h = gamma;
    }
  }

  Vector m_feed;
  if (t.feeds_mask) {
    m_feed = m;
    if (t.mask_decay) {
      const Vector pre = p.w_decay_m.cwiseProduct(delta) + p.b_decay_m;
      const Vector gamma = exp_neg_relu(pre);
      m_feed = decay_mask(m, gamma);
      if (cache) {
        cache->pre_m = pre;
        cache->gamma_m = gamma;
      }
    }
  }

  if (t.lstm) {
    state.h = lstm_step(p, state, x_in, cache);
  } else {
    state.h = gru_step(p, h_dec, x_in, t.feeds_mask ? &m_feed : nullptr, cache);
  }
  update_last_observed(state, x, m);
  return log_density;
}

}  // namespace

void grud_step(const CellParams& params, StepState& state, const Vector& x_t, const Vector& m_t,
               const Vector& delta_t, const Vector& means, CellKind kind, StepCache* cache) {
  if (kind != CellKind::GruD && kind != CellKind::GruDI && kind != CellKind::GruDS && kind != CellKind::GruDM) {
    throw ArgumentError("grud_step: " + to_string(kind) + " is not a GRU-D variant");
  }
  advance(kind, params, state, x_t, m_t, delta_t, means, Mode::Test, nullptr, cache);
}

double gruimp_step(const CellParams& params, StepState& state, const Vector& x_t, const Vector& m_t,
                   const Vector& delta_t, Mode mode, const Vector& noise, StepCache* cache) {
  return advance(CellKind::GruImp, params, state, x_t, m_t, delta_t, state.x_last, mode, &noise, cache);
}

// ---------------------------------------------------------------------------
// Sequences

CellParams apply_weight_masks(const CellParams& params, const WeightMasks& masks) {
  CellParams out = params;
  if (masks.W.size() > 0) out.W = out.W.cwiseProduct(masks.W);
  if (masks.U.size() > 0) out.U = out.U.cwiseProduct(masks.U);
  if (masks.V.size() > 0) out.V = out.V.cwiseProduct(masks.V);
  return out;
}

Matrix draw_imputation_noise(Index steps, Index vars, Rng& rng) {
  Matrix noise(steps, vars);
  for (Index k = 0; k < noise.size(); ++k) noise.data()[k] = rng.gaussian();
  return noise;
}

SequenceTrace forward_sequence(CellKind kind, const CellParams& params, const Sample& sample,
                               const Vector& means, const ForwardOptions& options) {
  const Index steps = sample.steps();
  const Index vars = sample.variables();
  if (steps == 0) throw ArgumentError("forward_sequence: empty sample");
  if (means.size() != vars) throw ArgumentError("forward_sequence: means length does not match sample");
  check_shapes(kind, params, vars);
  const bool imputes = traits(kind).input == InputRule::Imputation;
  if (imputes && options.mode == Mode::Train &&
      (!options.noise || options.noise->rows() < steps || options.noise->cols() != vars)) {
    throw ArgumentError("forward_sequence: GRU-IMP train mode needs a T x D noise matrix");
  }

  CellParams masked;
  const CellParams* p = &params;
  if (options.dropout && !options.dropout->empty()) {
    masked = apply_weight_masks(params, *options.dropout);
    p = &masked;
  }

  SequenceTrace trace;
  trace.steps.resize(static_cast<std::size_t>(steps));
  trace.hidden.reserve(static_cast<std::size_t>(steps));
  StepState state = initial_state(kind, p->hidden(), means);
  double log_density = 0.0;
  for (Index t = 0; t < steps; ++t) {
    const Vector x = sample.values.row(t).transpose();
    const Vector m = sample.mask.row(t).transpose();
    const Vector delta = sample.deltas.row(t).transpose();
    Vector noise_row;
    if (imputes && options.mode == Mode::Train) noise_row = options.noise->row(t).transpose();
    log_density += advance(kind, *p, state, x, m, delta, means, options.mode,
                           noise_row.size() ? &noise_row : nullptr, &trace.steps[static_cast<std::size_t>(t)]);
    trace.hidden.push_back(state.h);
  }
  trace.h_last = state.h;
  if (imputes) trace.aux_nll = -log_density / static_cast<double>(steps);
  return trace;
}

namespace {

/// Backward through the GRU gate equations; accumulates W, U, b, V gradients.
void backprop_gru(const CellParams& p, const StepCache& c, const Vector& dh, CellParams& g, Vector& dh_dec,
                  Vector& dx_in, Vector* dm_feed) {
  const Index hidden = p.hidden();
  const Vector dz = dh.cwiseProduct(c.cand - c.h_dec);
  const Vector dcand = dh.cwiseProduct(c.z);
  dh_dec = dh.cwiseProduct((1.0 - c.z.array()).matrix());

  const Vector da_c = dcand.array() * (1.0 - c.cand.array().square());
  const Vector rh = c.r.cwiseProduct(c.h_dec);
  g.W.bottomRows(hidden).noalias() += da_c * c.x_in.transpose();
  g.U.bottomRows(hidden).noalias() += da_c * rh.transpose();
  g.b.tail(hidden) += da_c;
  const Vector drh = p.U.bottomRows(hidden).transpose() * da_c;
  const Vector dr = drh.cwiseProduct(c.h_dec);
  dh_dec += drh.cwiseProduct(c.r);
  dx_in = p.W.bottomRows(hidden).transpose() * da_c;

  Vector da_zr(2 * hidden);
  da_zr.head(hidden) = dz.array() * c.z.array() * (1.0 - c.z.array());
  da_zr.tail(hidden) = dr.array() * c.r.array() * (1.0 - c.r.array());
  g.W.topRows(2 * hidden).noalias() += da_zr * c.x_in.transpose();
  g.U.topRows(2 * hidden).noalias() += da_zr * c.h_dec.transpose();
  g.b.head(2 * hidden) += da_zr;
  dh_dec.noalias() += p.U.topRows(2 * hidden).transpose() * da_zr;
  dx_in.noalias() += p.W.topRows(2 * hidden).transpose() * da_zr;

  if (dm_feed) {
    g.V.bottomRows(hidden).noalias() += da_c * c.m_feed.transpose();
    g.V.topRows(2 * hidden).noalias() += da_zr * c.m_feed.transpose();
    *dm_feed = p.V.bottomRows(hidden).transpose() * da_c + p.V.topRows(2 * hidden).transpose() * da_zr;
  }
}

void backprop_lstm(const CellParams& p, const StepCache& c, const Vector& dh, Vector& dc_carry, CellParams& g,
                   Vector& dh_prev) {
  const Index hidden = p.hidden();
  const Vector d_o = dh.cwiseProduct(c.tanh_c);
  const Vector dc = dc_carry + (dh.array() * c.gate_o.array() * (1.0 - c.tanh_c.array().square())).matrix();
  Vector da(4 * hidden);
  da.segment(0, hidden) = dc.array() * c.cand.array() * c.gate_i.array() * (1.0 - c.gate_i.array());
  da.segment(hidden, hidden) = dc.array() * c.c_prev.array() * c.gate_f.array() * (1.0 - c.gate_f.array());
  da.segment(2 * hidden, hidden) = d_o.array() * c.gate_o.array() * (1.0 - c.gate_o.array());
  da.segment(3 * hidden, hidden) = dc.array() * c.gate_i.array() * (1.0 - c.cand.array().square());
  dc_carry = dc.cwiseProduct(c.gate_f);
  g.W.noalias() += da * c.x_in.transpose();
  g.U.noalias() += da * c.h_prev.transpose();
  g.b += da;
  dh_prev = p.U.transpose() * da;
}

}  // namespace

CellParams backward_sequence(CellKind kind, const CellParams& params, const SequenceTrace& trace,
                             const Vector& grad_h_last, double grad_aux, const WeightMasks* dropout) {
  const CellTraits t = traits(kind);
  if (trace.steps.empty()) throw ArgumentError("backward_sequence: empty trace");
  const Index hidden = params.hidden();
  if (grad_h_last.size() != hidden) throw ArgumentError("backward_sequence: gradient length does not match H");
  const Index vars = trace.steps.front().mask.size();
  check_shapes(kind, params, vars);
  if (trace.steps.front().x_in.size() != params.W.cols() || trace.steps.front().h_prev.size() != hidden) {
    throw ArgumentError("backward_sequence: trace was produced with different parameter shapes");
  }

  CellParams masked;
  const CellParams* p = &params;
  if (dropout && !dropout->empty()) {
    masked = apply_weight_masks(params, *dropout);
    p = &masked;
  }

  CellParams g = params.zeros_like();
  const double steps = static_cast<double>(trace.steps.size());
  Vector dh = grad_h_last;
  Vector dc_carry = t.lstm ? Vector::Zero(hidden) : Vector();
  Vector dh_dec, dx_in, dm_feed, dh_prev;

  for (std::size_t k = trace.steps.size(); k-- > 0;) {
    const StepCache& c = trace.steps[k];
    if (t.lstm) {
      backprop_lstm(*p, c, dh, dc_carry, g, dh_prev);
      dh = dh_prev;
      continue;
    }
    backprop_gru(*p, c, dh, g, dh_dec, dx_in, t.feeds_mask ? &dm_feed : nullptr);

    if (t.hidden_decay) {
      dh_prev = dh_dec.cwiseProduct(c.gamma_h);
      const Vector da = decay_backward(dh_dec.cwiseProduct(c.h_prev), c.gamma_h, c.pre_h);
      g.W_decay_h.noalias() += da * c.delta.transpose();
      g.b_decay_h += da;
    } else {
      dh_prev = dh_dec;
    }

    if (t.mask_decay) {
      const Vector d_gamma = dm_feed.cwiseProduct((1.0 - c.mask.array()).matrix());
      const Vector da = decay_backward(d_gamma, c.gamma_m, c.pre_m);
      g.w_decay_m += da.cwiseProduct(c.delta);
      g.b_decay_m += da;
    }

    if (t.input_decay) {
      const Vector d_gamma =
          (dx_in.array() * (1.0 - c.mask.array()) * (c.x_last.array() - c.means.array())).matrix();
      const Vector da = decay_backward(d_gamma, c.gamma_x, c.pre_x);
      g.w_decay_x += da.cwiseProduct(c.delta);
      g.b_decay_x += da;
    }

    if (t.input == InputRule::Imputation) {
      Vector d_mu = (dx_in.array() * (1.0 - c.mask.array())).matrix();
      if (grad_aux != 0.0 && c.observed > 0.0) {
        // aux_nll = -(1/T) sum_t mean_{observed d} log N(x | mu, 1)
        d_mu -= (grad_aux / (steps * c.observed)) * c.residual;
      }
      const Vector d_proj = d_mu.cwiseProduct(c.gamma_imp);
      const Vector da = decay_backward(d_mu.cwiseProduct(c.proj), c.gamma_imp, c.pre_imp);
      g.w_decay_imp += da.cwiseProduct(c.delta);
      g.b_decay_imp += da;
      g.W_impute.noalias() += d_proj * c.h_prev.transpose();
      g.b_impute += d_proj;
      dh_prev.noalias() += p->W_impute.transpose() * d_proj;
    }
    dh = dh_prev;
  }

  if (dropout && !dropout->empty()) {
    if (dropout->W.size() > 0) g.W = g.W.cwiseProduct(dropout->W);
    if (dropout->U.size() > 0) g.U = g.U.cwiseProduct(dropout->U);
    if (dropout->V.size() > 0) g.V = g.V.cwiseProduct(dropout->V);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Model size

long long count_cell_params(CellKind kind, long long vars, long long hidden) {
  if (vars <= 0 || hidden <= 0) throw ArgumentError("count_params: dimensions must be positive");
  const CellTraits t = traits(kind);
  const long long din = t.input_size(vars);
  long long n = t.gates() * (hidden * din + hidden * hidden + hidden);
  if (t.feeds_mask) n += 3 * hidden * vars;
  if (t.input_decay) n += 2 * vars;
  if (t.hidden_decay) n += hidden * vars + hidden;
  if (t.mask_decay) n += 2 * vars;
  if (t.input == InputRule::Imputation) n += vars * hidden + vars + 2 * vars;
  return n;
}

long long count_params(CellKind kind, long long vars, long long hidden, long long outputs) {
  if (outputs <= 0) throw ArgumentError("count_params: outputs must be positive");
  return count_cell_params(kind, vars, hidden) + outputs * (hidden + 1) + 4 * outputs;
}

long long size_for_budget(CellKind kind, long long vars, long long outputs, long long budget) {
  if (count_params(kind, vars, 1, outputs) > budget) {
    throw ConfigError("parameter budget " + std::to_string(budget) + " is below the minimum " +
                      std::to_string(count_params(kind, vars, 1, outputs)) + " for " + to_string(kind));
  }
  // count_params is strictly increasing in H.
  long long lo = 1;
  long long hi = 2;
  while (count_params(kind, vars, hi, outputs) <= budget) hi *= 2;
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    (count_params(kind, vars, mid, outputs) <= budget ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace decayrnn
