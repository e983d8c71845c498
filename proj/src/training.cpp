#include "decayrnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <thread>

#include "decayrnn/metrics.hpp"
#include "decayrnn/reference.hpp"

namespace decayrnn {

// ---------------------------------------------------------------------------
// Config

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid training config: " + what); };
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(c.epsilon > 0.0)) fail("epsilon must be positive");
  if (c.batch_size < 1) fail("batch_size must be at least 1");
  if (c.max_epochs < 1) fail("max_epochs must be at least 1");
  if (c.patience < 1) fail("patience must be at least 1");
  if (!(c.head_dropout >= 0.0 && c.head_dropout < 1.0)) fail("head_dropout must lie in [0, 1)");
  if (!(c.recurrent_dropout >= 0.0 && c.recurrent_dropout < 1.0)) fail("recurrent_dropout must lie in [0, 1)");
  if (!(c.lambda >= 0.0)) fail("lambda must be non-negative");
  if (!(c.l2 >= 0.0)) fail("l2 must be non-negative");
  if (c.hidden < 0 || c.param_budget < 0) fail("hidden and param_budget must be non-negative");
  if (!(c.decay_init_scale >= 0.0)) fail("decay_init_scale must be non-negative");
  if (c.threads < 1) fail("threads must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"head_dropout", c.head_dropout},
          {"recurrent_dropout", c.recurrent_dropout},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"batch_norm", c.batch_norm},
          {"l2", c.l2},
          {"hidden", c.hidden},
          {"param_budget", c.param_budget},
          {"decay_init_scale", c.decay_init_scale}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key) && key != "threads") throw ConfigError("unknown training config key: " + key);
  }
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.head_dropout = j.value("head_dropout", c.head_dropout);
    c.recurrent_dropout = j.value("recurrent_dropout", c.recurrent_dropout);
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.l2 = j.value("l2", c.l2);
    c.hidden = j.value("hidden", c.hidden);
    c.param_budget = j.value("param_budget", c.param_budget);
    c.decay_init_scale = j.value("decay_init_scale", c.decay_init_scale);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  validate(c);
  return c;
}

int threads_from_env() {
  const char* env = std::getenv("DECAYRNN_THREADS");
  if (!env || !*env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

// ---------------------------------------------------------------------------
// Optimizer, dropout, early stopping

void adam_step(AdamState& state, Vector& params, const Vector& grads, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ArgumentError("adam_step: gradient and parameter sizes differ");
  if (!grads.allFinite()) throw NumericalError("non-finite gradient at Adam step " + std::to_string(state.step + 1));
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.epsilon);
}

WeightMasks recurrent_dropout_masks(const CellParams& params, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("recurrent dropout rate must lie in [0, 1)");
  WeightMasks masks;
  if (rate == 0.0) return masks;
  const double keep = 1.0 - rate;
  auto draw = [&](const Matrix& like) {
    Matrix m(like.rows(), like.cols());
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.bernoulli(keep) / keep;
    return m;
  };
  masks.W = draw(params.W);
  masks.U = draw(params.U);
  if (params.V.size() > 0) masks.V = draw(params.V);
  return masks;
}

bool EarlyStopping::update(int epoch, double score) {
  if (score > best_score_) {
    best_score_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL << 32;
constexpr std::uint64_t kSampleStream = 0x736d706cULL << 40;
constexpr std::uint64_t kHeadStream = 0x68656164ULL << 36;

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
/// only its own outputs, so results do not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<const Sample*> pointers(const Dataset& data, const std::vector<std::size_t>& indices) {
  std::vector<const Sample*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&data.samples.at(i));
  return out;
}

double validation_auc(const Model& model, const Dataset& data, const std::vector<std::size_t>& indices) {
  const auto samples = pointers(data, indices);
  const Matrix probs = predict_normalized(model, samples);
  return mean_auc(output_aucs(probs, samples, model.task_mode));
}

}  // namespace

Index resolve_hidden(CellKind kind, Index vars, Index outputs, const TrainConfig& cfg) {
  if (cfg.hidden > 0) return static_cast<Index>(cfg.hidden);
  if (cfg.param_budget > 0) return static_cast<Index>(size_for_budget(kind, vars, outputs, cfg.param_budget));
  return 16;
}

std::pair<double, double> evaluate_loss(const Model& model, const Dataset& normalized,
                                        const std::vector<std::size_t>& indices, double lambda) {
  if (indices.empty()) return {0.0, 0.0};
  Matrix hidden(static_cast<Index>(indices.size()), model.hidden);
  std::vector<double> aux(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto trace = forward_sequence(model.kind, model.cell, normalized.samples.at(indices[n]), model.means);
    hidden.row(static_cast<Index>(n)) = trace.h_last.transpose();
    aux[n] = trace.aux_nll;
  }
  const Matrix probs = head_predict(model.head, hidden, model.task_mode, model.batch_norm);
  double total = 0.0;
  double nll = 0.0;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    total += loss(probs.row(static_cast<Index>(n)).transpose(), normalized.samples.at(indices[n]).label,
                  model.task_mode, aux[n], lambda);
    nll += aux[n];
  }
  const double count = static_cast<double>(indices.size());
  return {total / count, nll / count};
}

TrainResult train(CellKind kind, const Dataset& normalized, const FoldSplit& split, const TrainConfig& cfg,
                  const NormStats& norm) {
  validate(cfg);
  if (split.train.empty()) throw ConfigError("training split is empty");
  if (split.validation.empty()) throw ConfigError("validation split is empty");
  const Index vars = normalized.variables();
  const Index outputs = normalized.outputs();
  const Index hidden = resolve_hidden(kind, vars, outputs, cfg);
  const bool imputes = traits(kind).input == InputRule::Imputation;
  const int threads = std::max(cfg.threads, threads_from_env());

  Rng init_rng(cfg.seed, kInitStream);
  Model model = init_model(kind, vars, hidden, outputs, normalized.task_mode, init_rng, cfg.decay_init_scale);
  model.batch_norm = cfg.batch_norm;
  model.norm = norm;
  model.means = empirical_means(normalized, split.train);
  model.variable_names = normalized.variable_names;

  TrainResult result;
  result.model = model;
  Vector theta = model.flatten_trainable();
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    double epoch_nll = 0.0;
    int batch_no = 0;

    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::size_t batch = end - start;
        std::vector<SequenceTrace> traces(batch);
        std::vector<WeightMasks> masks(batch);
        Matrix hidden_states(static_cast<Index>(batch), hidden);

        parallel_for(batch, threads, [&](std::size_t n) {
          const std::size_t idx = order[start + n];
          const Sample& s = normalized.samples[idx];
          Rng rng(cfg.seed, kSampleStream ^ (static_cast<std::uint64_t>(epoch) << 24) ^ idx);
          masks[n] = recurrent_dropout_masks(model.cell, cfg.recurrent_dropout, rng);
          Matrix noise;
          ForwardOptions opts;
          opts.mode = Mode::Train;
          opts.dropout = &masks[n];
          if (imputes) {
            noise = draw_imputation_noise(s.steps(), vars, rng);
            opts.noise = &noise;
          }
          traces[n] = forward_sequence(kind, model.cell, s, model.means, opts);
          hidden_states.row(static_cast<Index>(n)) = traces[n].h_last.transpose();
        });

        Rng head_rng(cfg.seed, kHeadStream ^ (static_cast<std::uint64_t>(epoch) << 20) ^ static_cast<std::uint64_t>(batch_no));
        HeadOptions hopts;
        hopts.task_mode = model.task_mode;
        hopts.phase = Phase::Train;
        hopts.batch_norm = cfg.batch_norm;
        hopts.dropout_rate = cfg.head_dropout;
        hopts.rng = &head_rng;
        HeadCache hcache;
        const Matrix probs = head_forward(model.head, hidden_states, hopts, &hcache);

        const double inv_batch = 1.0 / static_cast<double>(batch);
        Matrix d_out(static_cast<Index>(batch), outputs);
        for (std::size_t n = 0; n < batch; ++n) {
          const Sample& s = normalized.samples[order[start + n]];
          const Vector p = probs.row(static_cast<Index>(n)).transpose();
          epoch_loss += loss(p, s.label, model.task_mode, traces[n].aux_nll, imputes ? cfg.lambda : 0.0);
          epoch_nll += traces[n].aux_nll;
          d_out.row(static_cast<Index>(n)) = inv_batch * loss_gradient(p, s.label, model.task_mode).transpose();
        }
        const HeadGrads hgrads = head_backward(model.head, hcache, d_out);

        std::vector<CellParams> grads(batch);
        parallel_for(batch, threads, [&](std::size_t n) {
          grads[n] = backward_sequence(kind, model.cell, traces[n], hgrads.hidden.row(static_cast<Index>(n)).transpose(),
                                       imputes ? cfg.lambda * inv_batch : 0.0, &masks[n]);
        });
        Vector flat_grad(theta.size());
        Vector cell_grad = grads[0].flatten();
        for (std::size_t n = 1; n < batch; ++n) cell_grad += grads[n].flatten();
        flat_grad << cell_grad, hgrads.params.flatten();

        adam_step(adam, theta, flat_grad, cfg);
        model.unflatten_trainable(theta);
      }
    } catch (const NumericalError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    const double n_train = static_cast<double>(order.size());
    EpochRecord rec{epoch, epoch_loss / n_train, 0.0, epoch_nll / n_train};
    if (!std::isfinite(rec.train_loss)) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": non-finite training loss";
      break;
    }
    rec.val_auc = validation_auc(model, normalized, split.validation);
    result.history.push_back(rec);
    if (stopper.update(epoch, rec.val_auc)) result.model = model;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_auc = stopper.best_score();
  result.model.provenance = {{"kind", to_string(kind)},
                             {"config", to_json(cfg)},
                             {"best_epoch", result.best_epoch},
                             {"best_val_auc", result.best_val_auc}};
  return result;
}

TrainResult fit(CellKind kind, const Dataset& raw, const FoldSplit& split, const TrainConfig& cfg) {
  Dataset normalized = raw;
  const NormStats norm = normalize(normalized, split.train);
  return train(kind, normalized, split, cfg, norm);
}

std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    out += nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_auc", r.val_auc}, {"train_nll", r.train_nll}}
               .dump() +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

struct Instance {
  Sample sample;
  Vector means;
  Model model;
  Matrix noise;
};

Instance random_instance(CellKind kind, const GradientCheckDims& dims, Rng& rng) {
  Instance inst;
  const Index steps = dims.steps;
  const Index vars = dims.vars;
  Vector ts(steps);
  double t = 0.0;
  for (Index k = 0; k < steps; ++k) {
    ts(k) = t;
    t += rng.uniform(0.5, 2.0);
  }
  Matrix values(steps, vars);
  for (Index k = 0; k < values.size(); ++k) {
    values.data()[k] = rng.bernoulli(0.6) ? rng.gaussian() : missing_value();
  }
  Vector label(dims.task_mode == TaskMode::MultiTask ? dims.outputs : 1);
  if (dims.task_mode == TaskMode::Multiclass) {
    label(0) = static_cast<double>(rng.below(static_cast<std::uint64_t>(dims.outputs)));
  } else {
    for (Index k = 0; k < label.size(); ++k) label(k) = rng.bernoulli(0.5);
  }
  inst.sample = make_sample("check", ts, values, label);
  inst.means = Vector(vars);
  for (Index d = 0; d < vars; ++d) inst.means(d) = 0.5 * rng.gaussian();

  inst.model = init_model(kind, vars, dims.hidden, dims.outputs, dims.task_mode, rng, 1.0);
  inst.model.means = inst.means;
  auto fill = [&](auto& block, double lo, double hi) {
    for (Index k = 0; k < block.size(); ++k) block.data()[k] = rng.uniform(lo, hi);
  };
  CellParams& p = inst.model.cell;
  fill(p.W, -1.0, 1.0);
  fill(p.U, -1.0, 1.0);
  fill(p.b, -0.5, 0.5);
  fill(p.V, -1.0, 1.0);
  fill(p.w_decay_x, -1.0, 1.0);
  fill(p.b_decay_x, -1.0, 1.0);
  fill(p.W_decay_h, -1.0, 1.0);
  fill(p.b_decay_h, -1.0, 1.0);
  fill(p.w_decay_m, -1.0, 1.0);
  fill(p.b_decay_m, -1.0, 1.0);
  fill(p.W_impute, -1.0, 1.0);
  fill(p.b_impute, -0.5, 0.5);
  fill(p.w_decay_imp, -1.0, 1.0);
  fill(p.b_decay_imp, -1.0, 1.0);
  HeadParams& h = inst.model.head;
  fill(h.weight, -1.0, 1.0);
  fill(h.bias, -0.5, 0.5);
  fill(h.bn_scale, 0.5, 1.5);
  fill(h.bn_shift, -0.5, 0.5);
  fill(h.running_mean, -0.5, 0.5);
  fill(h.running_var, 0.5, 2.0);
  h.bn_updates = 1;
  inst.noise = draw_imputation_noise(steps, vars, rng);
  return inst;
}

ForwardOptions check_options(CellKind kind, const Instance& inst) {
  ForwardOptions opts;
  if (traits(kind).input == InputRule::Imputation) {
    opts.mode = Mode::Train;
    opts.noise = &inst.noise;
  }
  return opts;
}

double production_loss(CellKind kind, const Instance& inst, double lambda) {
  const auto trace = forward_sequence(kind, inst.model.cell, inst.sample, inst.means, check_options(kind, inst));
  const Matrix probs = head_predict(inst.model.head, trace.h_last.transpose(), inst.model.task_mode, true);
  return loss(probs.row(0).transpose(), inst.sample.label, inst.model.task_mode, trace.aux_nll, lambda);
}

long double oracle_loss_ld(CellKind kind, const Instance& inst, double lambda) {
  const Matrix* noise = traits(kind).input == InputRule::Imputation ? &inst.noise : nullptr;
  return reference::loss<long double>(inst.model, inst.sample, noise, lambda);
}

bool near_kink(const SequenceTrace& trace, double margin) {
  auto close = [&](const Vector& pre) { return pre.size() > 0 && pre.cwiseAbs().minCoeff() < margin; };
  for (const auto& c : trace.steps) {
    if (close(c.pre_x) || close(c.pre_h) || close(c.pre_m) || close(c.pre_imp)) return true;
  }
  return false;
}

}  // namespace

GradientCheckReport gradient_check(CellKind kind, const GradientCheckDims& dims, std::uint64_t seed, double lambda) {
  if (dims.vars < 1 || dims.hidden < 1 || dims.steps < 1 || dims.outputs < 1) {
    throw ArgumentError("gradient_check: dimensions must be positive");
  }
  constexpr double kStep = 1e-5;
  GradientCheckReport report;
  report.kind = kind;
  report.seed = seed;
  const double aux_weight = traits(kind).input == InputRule::Imputation ? lambda : 0.0;

  Rng rng(seed, 0x67636b ^ static_cast<std::uint64_t>(kind));
  Instance inst;
  SequenceTrace trace;
  for (;; ++report.redraws) {
    if (report.redraws >= 1000) throw NumericalError("gradient_check: could not draw an instance away from decay kinks");
    inst = random_instance(kind, dims, rng);
    trace = forward_sequence(kind, inst.model.cell, inst.sample, inst.means, check_options(kind, inst));
    // A perturbation of one decay weight moves a pre-activation by at most step * max(1, delta).
    const double margin = 10.0 * kStep * std::max(1.0, inst.sample.deltas.maxCoeff());
    if (!near_kink(trace, margin)) break;
  }

  // Analytic gradient.
  HeadOptions hopts;
  hopts.task_mode = inst.model.task_mode;
  hopts.phase = Phase::Eval;
  hopts.batch_norm = true;
  HeadCache hcache;
  HeadParams head_copy = inst.model.head;
  const Matrix probs = head_forward(head_copy, trace.h_last.transpose(), hopts, &hcache);
  const Matrix d_out = loss_gradient(probs.row(0).transpose(), inst.sample.label, inst.model.task_mode).transpose();
  const HeadGrads hg = head_backward(inst.model.head, hcache, d_out);
  const CellParams cg = backward_sequence(kind, inst.model.cell, trace, hg.hidden.row(0).transpose(), aux_weight);
  Vector analytic(inst.model.flatten_trainable().size());
  analytic << cg.flatten(), hg.params.flatten();

  // Block names for each flat index.
  std::vector<std::pair<std::string, Index>> spans;
  inst.model.cell.visit([&](const char* name, const auto& block) {
    if (block.size() > 0) spans.emplace_back(name, block.size());
  });
  const Index head_c = inst.model.head.bias.size();
  spans.emplace_back("head.weight", inst.model.head.weight.size());
  spans.emplace_back("head.bias", head_c);
  spans.emplace_back("head.bn_scale", head_c);
  spans.emplace_back("head.bn_shift", head_c);

  report.reference_gap = std::abs(production_loss(kind, inst, aux_weight) -
                                  static_cast<double>(oracle_loss_ld(kind, inst, aux_weight)));

  Vector theta = inst.model.flatten_trainable();
  report.parameters = theta.size();
  Index offset = 0;
  for (const auto& [name, count] : spans) {
    double block_max = 0.0;
    for (Index k = offset; k < offset + count; ++k) {
      const double orig = theta(k);
      theta(k) = orig + kStep;
      inst.model.unflatten_trainable(theta);
      const long double up = oracle_loss_ld(kind, inst, aux_weight);
      theta(k) = orig - kStep;
      inst.model.unflatten_trainable(theta);
      const long double down = oracle_loss_ld(kind, inst, aux_weight);
      theta(k) = orig;
      const double numeric = static_cast<double>((up - down) / (2.0L * static_cast<long double>(kStep)));
      const double a = analytic(k);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      block_max = std::max(block_max, rel);
    }
    inst.model.unflatten_trainable(theta);
    report.per_block.emplace_back(name, block_max);
    if (report.worst_block.empty() || block_max > report.max_rel_error) {
      report.max_rel_error = block_max;
      report.worst_block = name;
    }
    offset += count;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Logistic baseline

Vector logistic_features(const Sample& s, double bin_hours, Index bins, bool with_masking) {
  if (!(bin_hours > 0.0)) throw ArgumentError("logistic_features: bin_hours must be positive");
  const Index vars = s.variables();
  Matrix sum = Matrix::Zero(bins, vars);
  Matrix count = Matrix::Zero(bins, vars);
  for (Index t = 0; t < s.steps(); ++t) {
    const auto bin = static_cast<Index>(std::floor(s.timestamps(t) / bin_hours));
    if (bin < 0 || bin >= bins) continue;
    for (Index d = 0; d < vars; ++d) {
      if (s.mask(t, d) > 0.5) {
        sum(bin, d) += s.values(t, d);
        count(bin, d) += 1.0;
      }
    }
  }
  Matrix grid = Matrix::Zero(bins, vars);
  for (Index d = 0; d < vars; ++d) {
    Index first = -1;
    double last = 0.0;
    for (Index b = 0; b < bins; ++b) {
      if (count(b, d) > 0.0) {
        last = sum(b, d) / count(b, d);
        if (first < 0) first = b;
      }
      grid(b, d) = last;
    }
    // Backward fill the leading gap with the first observation.
    for (Index b = 0; b < first; ++b) grid(b, d) = grid(first, d);
  }
  Vector out(bins * vars * (with_masking ? 2 : 1));
  out.head(bins * vars) = Eigen::Map<const Vector>(grid.data(), bins * vars);
  if (with_masking) {
    const Matrix observed = (count.array() > 0.0).cast<double>().matrix();
    out.tail(bins * vars) = Eigen::Map<const Vector>(observed.data(), bins * vars);
  }
  return out;
}

namespace {

Matrix logistic_probs(const LogisticModel& m, const Matrix& features) {
  Matrix y = features * m.weight.transpose();
  y.rowwise() += m.bias.transpose();
  Matrix probs(y.rows(), y.cols());
  for (Index n = 0; n < y.rows(); ++n) {
    if (m.task_mode == TaskMode::Multiclass) {
      probs.row(n) = softmax(y.row(n).transpose()).transpose();
    } else {
      probs.row(n) = sigmoid(y.row(n));
    }
  }
  return probs;
}

Matrix feature_matrix(const LogisticModel& m, const std::vector<const Sample*>& normalized) {
  const Index width = m.bins * m.vars * (m.with_masking ? 2 : 1);
  Matrix f(static_cast<Index>(normalized.size()), width);
  for (std::size_t n = 0; n < normalized.size(); ++n) {
    f.row(static_cast<Index>(n)) = logistic_features(*normalized[n], m.bin_hours, m.bins, m.with_masking).transpose();
  }
  return f;
}

}  // namespace

LogisticResult logistic_baseline(const Dataset& raw, const FoldSplit& split, double bin_hours, bool with_masking,
                                 const TrainConfig& cfg) {
  validate(cfg);
  if (!(bin_hours > 0.0)) throw ArgumentError("logistic_baseline: bin_hours must be positive");
  if (split.train.empty() || split.validation.empty()) throw ConfigError("logistic_baseline: empty train or validation split");
  Dataset data = raw;
  LogisticModel model;
  model.norm = normalize(data, split.train);
  model.task_mode = data.task_mode;
  model.bin_hours = bin_hours;
  model.vars = data.variables();
  model.with_masking = with_masking;
  double horizon = 0.0;
  for (std::size_t i : split.train) horizon = std::max(horizon, data.samples[i].timestamps.maxCoeff());
  model.bins = static_cast<Index>(std::floor(horizon / bin_hours)) + 1;
  const Index outputs = data.outputs();
  const Index width = model.bins * model.vars * (with_masking ? 2 : 1);
  model.weight = Matrix::Zero(outputs, width);
  model.bias = Vector::Zero(outputs);

  std::vector<const Sample*> all;
  for (const Sample& s : data.samples) all.push_back(&s);
  const Matrix features = feature_matrix(model, all);

  auto flatten = [](const LogisticModel& m) {
    Vector v(m.weight.size() + m.bias.size());
    v << Eigen::Map<const Vector>(m.weight.data(), m.weight.size()), m.bias;
    return v;
  };
  auto unflatten = [](LogisticModel& m, const Vector& v) {
    Eigen::Map<Vector>(m.weight.data(), m.weight.size()) = v.head(m.weight.size());
    m.bias = v.tail(m.bias.size());
  };

  LogisticResult result;
  result.model = model;
  Vector theta = flatten(model);
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order = split.train;
  std::vector<const Sample*> val_samples;
  for (std::size_t i : split.validation) val_samples.push_back(&data.samples[i]);
  Matrix val_features(static_cast<Index>(split.validation.size()), width);
  for (std::size_t n = 0; n < split.validation.size(); ++n) val_features.row(static_cast<Index>(n)) = features.row(static_cast<Index>(split.validation[n]));

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = static_cast<Index>(end - start);
      Matrix fb(batch, width);
      for (Index n = 0; n < batch; ++n) fb.row(n) = features.row(static_cast<Index>(order[start + static_cast<std::size_t>(n)]));
      const Matrix probs = logistic_probs(model, fb);
      Matrix d_out(batch, outputs);
      for (Index n = 0; n < batch; ++n) {
        const Sample& s = data.samples[order[start + static_cast<std::size_t>(n)]];
        epoch_loss += loss(probs.row(n).transpose(), s.label, model.task_mode);
        d_out.row(n) = loss_gradient(probs.row(n).transpose(), s.label, model.task_mode).transpose() / static_cast<double>(batch);
      }
      const Matrix g_weight = d_out.transpose() * fb + cfg.l2 * model.weight;
      const Vector g_bias = d_out.colwise().sum().transpose();
      Vector grad(theta.size());
      grad << Eigen::Map<const Vector>(g_weight.data(), g_weight.size()), g_bias;
      adam_step(adam, theta, grad, cfg);
      unflatten(model, theta);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), 0.0, 0.0};
    rec.val_auc = mean_auc(output_aucs(logistic_probs(model, val_features), val_samples, model.task_mode));
    result.history.push_back(rec);
    if (stopper.update(epoch, rec.val_auc)) result.model = model;
    if (stopper.should_stop()) break;
  }
  return result;
}

Matrix predict_logistic(const LogisticModel& model, const std::vector<const Sample*>& raw_samples) {
  std::vector<Sample> normalized;
  normalized.reserve(raw_samples.size());
  for (const Sample* s : raw_samples) {
    Sample c = *s;
    for (Index t = 0; t < c.steps(); ++t) {
      for (Index d = 0; d < c.variables(); ++d) {
        if (c.mask(t, d) > 0.5) c.values(t, d) = (c.values(t, d) - model.norm.mean(d)) / model.norm.std(d);
      }
    }
    normalized.push_back(std::move(c));
  }
  std::vector<const Sample*> ptrs;
  for (const Sample& s : normalized) ptrs.push_back(&s);
  return logistic_probs(model, feature_matrix(model, ptrs));
}

}  // namespace decayrnn
