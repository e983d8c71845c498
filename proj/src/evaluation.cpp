#include "decayrnn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "decayrnn/format.hpp"

namespace decayrnn {

double evaluate_auc(const Model& model, const std::vector<const Sample*>& raw_samples) {
  return mean_auc(output_aucs(predict(model, raw_samples), raw_samples, model.task_mode));
}

// ---------------------------------------------------------------------------
// Cross-validation

std::vector<FoldSplit> cv_splits(const Dataset& data, int k, std::uint64_t seed) {
  if (k >= 2) return kfold_split(data, k, seed, true);
  if (k != 1) throw ConfigError("folds must be at least 1");
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(seed, 0x686f6c64ULL);
  FoldSplit split;
  std::vector<std::size_t> rest;
  std::tie(rest, split.test) = stratified_holdout(data, all, 0.2, rng);
  std::tie(split.train, split.validation) = stratified_holdout(data, rest, 0.2, rng);
  return {split};
}

namespace {

std::vector<std::string> output_names(const Dataset& data) {
  std::vector<std::string> names;
  if (data.task_mode == TaskMode::Multiclass) {
    for (int c = 0; c < data.n_classes; ++c) names.push_back("class_" + std::to_string(c));
  } else if (!data.task_names.empty()) {
    names = data.task_names;
  } else {
    for (int k = 0; k < data.outputs(); ++k) names.push_back("task_" + std::to_string(k));
  }
  return names;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

CvReport cross_validate(CellKind kind, const Dataset& raw, const TrainConfig& cfg, int k, std::vector<Model>* models,
                        std::vector<FoldSplit>* splits_out) {
  validate(cfg);
  const std::vector<FoldSplit> splits = cv_splits(raw, k, cfg.seed);
  if (splits_out) *splits_out = splits;
  CvReport report;
  report.kind = kind;
  report.folds = k;
  report.seed = cfg.seed;
  report.output_names = output_names(raw);

  std::vector<double> fold_aucs;
  std::vector<std::vector<double>> per_output(static_cast<std::size_t>(raw.outputs()));
  for (std::size_t f = 0; f < splits.size(); ++f) {
    const FoldSplit& split = splits[f];
    TrainResult tr = fit(kind, raw, split, cfg);
    std::vector<const Sample*> test;
    for (std::size_t i : split.test) test.push_back(&raw.samples[i]);

    FoldResult fr;
    fr.fold = static_cast<int>(f);
    fr.output_aucs = output_aucs(predict(tr.model, test), test, tr.model.task_mode);
    fr.auc = mean_auc(fr.output_aucs);
    fr.best_epoch = tr.best_epoch;
    fr.best_val_auc = tr.best_val_auc;
    fr.epochs_run = static_cast<int>(tr.history.size());
    fr.aborted = tr.aborted;
    fr.abort_reason = tr.abort_reason;
    for (std::size_t o = 0; o < fr.output_aucs.size(); ++o) {
      if (fr.output_aucs[o].valid) per_output[o].push_back(fr.output_aucs[o].value);
    }
    fold_aucs.push_back(fr.auc);
    report.fold_results.push_back(std::move(fr));
    if (models) models->push_back(std::move(tr.model));
  }
  std::tie(report.mean, report.std) = mean_std(fold_aucs);
  for (const auto& xs : per_output) {
    const auto [m, s] = mean_std(xs);
    report.output_mean.push_back(m);
    report.output_std.push_back(s);
  }
  return report;
}

nlohmann::json to_json(const CvReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.fold_results) {
    nlohmann::json aucs = nlohmann::json::array();
    for (const auto& a : f.output_aucs) aucs.push_back(a.valid ? nlohmann::json(a.value) : nlohmann::json());
    folds.push_back({{"fold", f.fold},
                     {"seed", r.seed},
                     {"auc", f.auc},
                     {"output_auc", aucs},
                     {"best_epoch", f.best_epoch},
                     {"best_val_auc", f.best_val_auc},
                     {"epochs_run", f.epochs_run},
                     {"aborted", f.aborted},
                     {"abort_reason", f.abort_reason}});
  }
  nlohmann::json outputs = nlohmann::json::array();
  for (std::size_t o = 0; o < r.output_names.size() && o < r.output_mean.size(); ++o) {
    outputs.push_back(
        {{"name", r.output_names[o]}, {"mean", number_or_null(r.output_mean[o])}, {"std", number_or_null(r.output_std[o])}});
  }
  return {{"kind", to_string(r.kind)}, {"folds", r.folds},     {"seed", r.seed},   {"mean_auc", r.mean},
          {"std_auc", r.std},          {"outputs", outputs}, {"per_fold", folds}};
}

// ---------------------------------------------------------------------------
// Online prediction

std::vector<OnlinePoint> online_eval(const Model& model, const std::vector<const Sample*>& raw_samples,
                                     const std::vector<double>& cutoffs) {
  std::vector<OnlinePoint> out;
  for (double cutoff : cutoffs) {
    OnlinePoint point;
    point.cutoff_hours = cutoff;
    const bool all_nonempty = cutoff > 0.0 && std::all_of(raw_samples.begin(), raw_samples.end(), [&](const Sample* s) {
                                return s->steps() > 0 && s->timestamps(0) <= cutoff;
                              });
    if (!all_nonempty) {
      point.skipped = true;
      point.auc = std::nan("");
      out.push_back(point);
      continue;
    }
    std::vector<Sample> prefixes;
    prefixes.reserve(raw_samples.size());
    for (const Sample* s : raw_samples) prefixes.push_back(truncate_prefix(*s, cutoff));
    std::vector<const Sample*> ptrs;
    for (const Sample& s : prefixes) ptrs.push_back(&s);
    point.auc = evaluate_auc(model, ptrs);
    out.push_back(point);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-size scaling

std::vector<ScalingCell> scaling_experiment(const std::vector<CellKind>& kinds, const Dataset& raw,
                                            const std::vector<std::size_t>& sizes, const TrainConfig& cfg, int k) {
  std::set<int> strata;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) strata.insert(raw.stratum(i));
  const std::size_t minimum = static_cast<std::size_t>(std::max(k, 1)) * strata.size();
  for (std::size_t size : sizes) {
    if (size < minimum) {
      throw ConfigError("scaling: size " + std::to_string(size) + " is below folds x classes = " + std::to_string(minimum));
    }
    if (size > raw.samples.size()) throw ConfigError("scaling: size " + std::to_string(size) + " exceeds the dataset");
  }
  std::vector<ScalingCell> cells;
  for (std::size_t size : sizes) {
    const Dataset data = size == raw.samples.size() ? raw : subset(raw, stratified_subsample(raw, size, cfg.seed));
    double positives = 0.0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) positives += data.stratum(i) == 1 ? 1.0 : 0.0;
    for (CellKind kind : kinds) {
      ScalingCell cell;
      cell.kind = kind;
      cell.size = size;
      cell.positive_rate = positives / static_cast<double>(data.samples.size());
      cell.cv = cross_validate(kind, data, cfg, k);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Decay introspection

DecayReport decay_report(const Model& model, int bins) {
  if (bins < 1) throw ArgumentError("decay_report: bins must be positive");
  const CellTraits t = traits(model.kind);
  const CellParams& p = model.cell;
  DecayReport report;
  report.kind = model.kind;

  const Vector* w = nullptr;
  const Vector* b = nullptr;
  if (t.input_decay) {
    report.curve_block = "gamma_x";
    w = &p.w_decay_x;
    b = &p.b_decay_x;
  } else if (t.mask_decay) {
    report.curve_block = "gamma_m";
    w = &p.w_decay_m;
    b = &p.b_decay_m;
  } else if (t.input == InputRule::Imputation) {
    report.curve_block = "gamma_imp";
    w = &p.w_decay_imp;
    b = &p.b_decay_imp;
  }
  if (!w && !t.hidden_decay) throw ConfigError(to_string(model.kind) + " has no decay parameters to report");

  auto name = [&](Index d) {
    return d < static_cast<Index>(model.variable_names.size()) ? model.variable_names[static_cast<std::size_t>(d)]
                                                               : "v" + std::to_string(d);
  };

  if (w) {
    constexpr int kPoints = 97;  // 0..24h at 0.25h
    for (Index d = 0; d < model.vars; ++d) {
      DecayCurve curve;
      curve.variable = name(d);
      for (int k = 0; k < kPoints; ++k) {
        const double delta = 0.25 * k;
        curve.delta.push_back(delta);
        curve.gamma.push_back(std::exp(-std::max(0.0, (*w)(d)*delta + (*b)(d))));
      }
      report.curves.push_back(std::move(curve));
    }
  }

  if (t.hidden_decay) {
    const Matrix& W = p.W_decay_h;
    double lo = W.minCoeff();
    double hi = W.maxCoeff();
    if (hi - lo <= 0.0) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double width = (hi - lo) / bins;
    for (Index d = 0; d < model.vars; ++d) {
      std::vector<long long> counts(static_cast<std::size_t>(bins), 0);
      for (Index i = 0; i < W.rows(); ++i) {
        auto k = static_cast<int>(std::floor((W(i, d) - lo) / width));
        counts[static_cast<std::size_t>(std::clamp(k, 0, bins - 1))] += 1;
      }
      for (int k = 0; k < bins; ++k) {
        report.hidden_histogram.push_back(
            {name(d), lo + k * width, k + 1 == bins ? hi : lo + (k + 1) * width, counts[static_cast<std::size_t>(k)]});
      }
    }
  }
  return report;
}

nlohmann::json to_json(const DecayReport& r) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : r.curves) curves.push_back({{"variable", c.variable}, {"delta", c.delta}, {"gamma", c.gamma}});
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : r.hidden_histogram) {
    hist.push_back({{"variable", h.variable}, {"bin_lo", h.lo}, {"bin_hi", h.hi}, {"count", h.count}});
  }
  return {{"kind", to_string(r.kind)}, {"curve_block", r.curve_block}, {"curves", curves}, {"hidden_decay_histogram", hist}};
}

// ---------------------------------------------------------------------------
// CSV writers

std::string config_comment(const nlohmann::json& config) {
  if (config.is_null() || config.empty()) return "";
  return "# config: " + config.dump() + "\n";
}

std::string decay_curves_csv(const DecayReport& r, const nlohmann::json& config) {
  std::string out = config_comment(config) + "variable,delta,gamma\n";
  for (const auto& c : r.curves) {
    for (std::size_t k = 0; k < c.delta.size(); ++k) {
      out += c.variable + "," + format_number(c.delta[k]) + "," + format_number(c.gamma[k]) + "\n";
    }
  }
  return out;
}

std::string hidden_decay_hist_csv(const DecayReport& r, const nlohmann::json& config) {
  std::string out = config_comment(config) + "variable,bin_lo,bin_hi,count\n";
  for (const auto& h : r.hidden_histogram) {
    out += h.variable + "," + format_number(h.lo) + "," + format_number(h.hi) + "," + std::to_string(h.count) + "\n";
  }
  return out;
}

std::string online_auc_csv(const std::vector<OnlinePoint>& points, const nlohmann::json& config) {
  std::string out = config_comment(config) + "cutoff_hours,auc,skipped\n";
  for (const auto& p : points) {
    out += format_number(p.cutoff_hours) + "," + (p.skipped ? std::string() : format_number(p.auc)) + "," +
           (p.skipped ? "1" : "0") + "\n";
  }
  return out;
}

std::string correlation_csv(const std::vector<CorrelationEntry>& entries, const nlohmann::json& config) {
  std::string out = config_comment(config) + "variable,task,pearson_r,degenerate\n";
  for (const auto& e : entries) {
    out += e.variable + "," + e.task + "," + format_number(e.pearson_r) + "," + (e.degenerate ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace decayrnn
