#pragma once

#include <string>
#include <vector>

#include "decayrnn/numeric.hpp"
#include "decayrnn/timeseries.hpp"

namespace decayrnn {

enum class CellKind {
  GruMean,
  GruForward,
  GruSimple,
  GruSimpleMaskOnly,
  GruSimpleIntervalOnly,
  GruD,
  GruDI,
  GruDS,
  GruDM,
  GruImp,
  LstmMean,
};

std::string to_string(CellKind kind);
/// Lower-case command-line name ("grud", "gru-mean").
std::string cli_name(CellKind kind);
/// Accepts canonical names ("GRU-D"), CLI names ("grud", "gru-mean") and is
/// case-insensitive.
CellKind cell_kind_from_string(const std::string& name);
const std::vector<CellKind>& all_cell_kinds();

/// How the raw measurement is turned into the vector the gates see.
enum class InputRule { Mean, Forward, DecayToMean, Imputation };

/// Structural wiring of one cell kind.
struct CellTraits {
  InputRule input = InputRule::Mean;
  bool feeds_mask = false;       // V blocks on the masking vector
  bool input_decay = false;      // gamma_x
  bool hidden_decay = false;     // gamma_h
  bool mask_decay = false;       // gamma_m
  bool appends_mask = false;     // GRU-Simple families: [x; m] in the input
  bool appends_interval = false; // GRU-Simple families: [x; delta] in the input
  bool lstm = false;

  int gates() const { return lstm ? 4 : 3; }
  Index input_size(Index vars) const {
    return vars * (1 + (appends_mask ? 1 : 0) + (appends_interval ? 1 : 0));
  }
  bool has_decay() const;
};

CellTraits traits(CellKind kind);

/// Weights of one recurrent cell. Gate blocks are stacked row-wise: (z, r,
/// candidate) for GRU kinds and (input, forget, output, candidate) for LSTM.
/// Blocks that a kind does not use are empty. Diagonal decays are vectors.
struct CellParams {
  Matrix W;  // G*H x Din
  Matrix U;  // G*H x H
  Vector b;  // G*H
  Matrix V;  // 3H x D
  Vector w_decay_x, b_decay_x;      // D
  Matrix W_decay_h;                 // H x D
  Vector b_decay_h;                 // H
  Vector w_decay_m, b_decay_m;      // D
  Matrix W_impute;                  // D x H
  Vector b_impute;                  // D
  Vector w_decay_imp, b_decay_imp;  // D

  Index hidden() const { return U.cols(); }

  /// Calls f(name, block) for every block in the fixed serialization order,
  /// including empty ones.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  Index size() const;
  Vector flatten() const;
  void unflatten(const Vector& flat);
  /// Same shapes, all zeros.
  CellParams zeros_like() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& p, F& f) {
    f("W", p.W);
    f("U", p.U);
    f("b", p.b);
    f("V", p.V);
    f("w_decay_x", p.w_decay_x);
    f("b_decay_x", p.b_decay_x);
    f("W_decay_h", p.W_decay_h);
    f("b_decay_h", p.b_decay_h);
    f("w_decay_m", p.w_decay_m);
    f("b_decay_m", p.b_decay_m);
    f("W_impute", p.W_impute);
    f("b_impute", p.b_impute);
    f("w_decay_imp", p.w_decay_imp);
    f("b_decay_imp", p.b_decay_imp);
  }
};

/// Allocates every block the kind needs. Gate weights are uniform in
/// +-1/sqrt(fan_in), except the masking feed V and the mask/interval columns
/// of GRU-Simple inputs, which start at 0; decay weights uniform in
/// [0, decay_init_scale); biases 0.
CellParams init_cell_params(CellKind kind, Index vars, Index hidden, Rng& rng,
                            double decay_init_scale = 0.05);

/// Throws ArgumentError when a block's shape disagrees with (kind, vars, hidden).
void check_shapes(CellKind kind, const CellParams& params, Index vars);

// --- per-step building blocks ---------------------------------------------

/// m*x + (1-m)*means. Missing entries of x may hold the NaN sentinel.
Vector impute_mean(const Vector& x, const Vector& m, const Vector& means);
Vector impute_forward(const Vector& x, const Vector& m, const Vector& x_last);
Vector build_simple_input(const Vector& x_imputed, const Vector& m, const Vector& delta, CellKind kind);

/// exp(-max(0, w .* delta + b)) for a diagonal decay.
Vector decay_rate(const Vector& w, const Vector& b, const Vector& delta);
/// exp(-max(0, W delta + b)) for a full decay matrix.
Vector decay_rate(const Matrix& W, const Vector& b, const Vector& delta);

Vector decay_input(const Vector& x, const Vector& m, const Vector& x_last, const Vector& means,
                   const Vector& gamma_x);
Vector decay_hidden(const Vector& h_prev, const Vector& gamma_h);
Vector decay_mask(const Vector& m, const Vector& gamma_m);

/// Log-density of a unit-variance Gaussian averaged over observed entries
/// (0 when nothing is observed).
double masked_log_density(const Vector& x, const Vector& m, const Vector& mu);

/// Intermediate values of one step, kept for the backward pass.
struct StepCache {
  Vector mask, delta;
  Vector x_in;    // vector fed to the gates
  Vector m_feed;  // masking fed through V (raw or decayed)
  Vector h_prev;  // h_{t-1} as carried
  Vector h_dec;   // h_{t-1} after hidden decay
  Vector z, r, cand;
  Vector gate_i, gate_f, gate_o, c_prev, c, tanh_c;  // LSTM
  Vector pre_x, gamma_x, x_last, means;               // input decay
  Vector pre_h, gamma_h;
  Vector pre_m, gamma_m;
  Vector pre_imp, gamma_imp, proj, mu, residual;      // residual = m .* (x - mu)
  double observed = 0.0;
};

struct StepState {
  Vector h;
  Vector x_last;
  Vector c;  // LSTM cell state
};

StepState initial_state(CellKind kind, Index hidden, const Vector& means);

/// Plain GRU update on an already-built input. `m_feed` adds the V terms when
/// non-null. Returns h_t.
Vector gru_step(const CellParams& params, const Vector& h_prev, const Vector& x_in,
                const Vector* m_feed = nullptr, StepCache* cache = nullptr);

/// One step of GRU-D / GRU-DI / GRU-DS / GRU-DM. `x_t` may hold NaN where
/// `m_t` is 0.
void grud_step(const CellParams& params, StepState& state, const Vector& x_t, const Vector& m_t,
               const Vector& delta_t, const Vector& means, CellKind kind, StepCache* cache = nullptr);

enum class Mode { Train, Test };

/// One GRU-IMP step. In Train mode missing entries are mu + noise; in Test
/// mode they are mu. Returns the masked average log-density of the observed
/// entries under N(mu, 1).
double gruimp_step(const CellParams& params, StepState& state, const Vector& x_t, const Vector& m_t,
                   const Vector& delta_t, Mode mode, const Vector& noise, StepCache* cache = nullptr);

// --- whole sequences -------------------------------------------------------

/// Per-entry multipliers (already scaled by 1/(1-rate)) for W, U and V.
/// Empty matrices mean "no dropout" for that block.
struct WeightMasks {
  Matrix W, U, V;
  bool empty() const { return W.size() == 0 && U.size() == 0 && V.size() == 0; }
};

CellParams apply_weight_masks(const CellParams& params, const WeightMasks& masks);

struct SequenceTrace {
  std::vector<StepCache> steps;
  Vector h_last;
  /// Mean over steps of the negative masked log-density (GRU-IMP only).
  double aux_nll = 0.0;
  std::vector<Vector> hidden;  // h_1..h_T
};

struct ForwardOptions {
  Mode mode = Mode::Test;
  const WeightMasks* dropout = nullptr;
  /// T x D standard-normal draws for GRU-IMP in Train mode.
  const Matrix* noise = nullptr;
};

SequenceTrace forward_sequence(CellKind kind, const CellParams& params, const Sample& sample,
                               const Vector& means, const ForwardOptions& options = {});

/// Exact BPTT. `grad_aux` is dLoss/d(aux_nll). Gradients are w.r.t. the
/// undropped parameters when `dropout` is given.
CellParams backward_sequence(CellKind kind, const CellParams& params, const SequenceTrace& trace,
                             const Vector& grad_h_last, double grad_aux = 0.0,
                             const WeightMasks* dropout = nullptr);

/// T x D standard-normal draws for GRU-IMP's reparametrized imputation.
Matrix draw_imputation_noise(Index steps, Index vars, Rng& rng);

// --- model size --------------------------------------------------------------

/// Recurrent parameters only.
long long count_cell_params(CellKind kind, long long vars, long long hidden);

/// Recurrent parameters plus the head: C*(H+1) affine values and 4*C
/// batch-norm values.
long long count_params(CellKind kind, long long vars, long long hidden, long long outputs);

/// Largest hidden size whose count_params fits in `budget`.
long long size_for_budget(CellKind kind, long long vars, long long outputs, long long budget);

}  // namespace decayrnn
