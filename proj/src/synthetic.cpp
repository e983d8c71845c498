#include <algorithm>
#include <cmath>
#include <numbers>

#include "decayrnn/timeseries.hpp"

namespace decayrnn {

nlohmann::json to_json(const SyntheticConfig& cfg) {
  return {{"n_samples", cfg.n_samples},
          {"n_variables", cfg.n_variables},
          {"n_classes", cfg.n_classes},
          {"target_missing_rate", cfg.target_missing_rate},
          {"correlation_strength", cfg.correlation_strength},
          {"seed", cfg.seed},
          {"min_steps", cfg.min_steps},
          {"max_steps", cfg.max_steps},
          {"class_separation", cfg.class_separation},
          {"noise_std", cfg.noise_std},
          {"amplitude_jitter", cfg.amplitude_jitter}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig cfg;
  cfg.n_samples = j.value("n_samples", cfg.n_samples);
  cfg.n_variables = j.value("n_variables", cfg.n_variables);
  cfg.n_classes = j.value("n_classes", cfg.n_classes);
  cfg.target_missing_rate = j.value("target_missing_rate", cfg.target_missing_rate);
  cfg.correlation_strength = j.value("correlation_strength", cfg.correlation_strength);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.min_steps = j.value("min_steps", cfg.min_steps);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.class_separation = j.value("class_separation", cfg.class_separation);
  cfg.noise_std = j.value("noise_std", cfg.noise_std);
  cfg.amplitude_jitter = j.value("amplitude_jitter", cfg.amplitude_jitter);
  return cfg;
}

namespace {

void validate(const SyntheticConfig& cfg) {
  if (cfg.n_samples < 2) throw ConfigError("n_samples must be at least 2");
  if (cfg.n_variables < 1) throw ConfigError("n_variables must be positive");
  if (cfg.n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (cfg.n_samples < cfg.n_classes) throw ConfigError("need at least one sample per class");
  if (!(cfg.target_missing_rate > 0.0 && cfg.target_missing_rate < 1.0)) {
    throw ConfigError("target_missing_rate must lie in (0, 1)");
  }
  if (!(cfg.correlation_strength >= 0.0 && cfg.correlation_strength <= 1.0)) {
    throw ConfigError("correlation_strength must lie in [0, 1]");
  }
  if (cfg.min_steps < 1 || cfg.max_steps < cfg.min_steps) throw ConfigError("invalid step range");
  if (cfg.noise_std < 0.0 || cfg.class_separation < 0.0 || cfg.amplitude_jitter < 0.0) throw ConfigError("negative noise or separation");
}

struct MissingnessDraw {
  std::vector<Matrix> uniforms;  // per sample, T x D
  std::vector<double> offsets;   // per sample, label-dependent offset in [-1, 1]
  Vector labels;
};

/// Missing iff u < clamp(rate + beta * offset). Returns per-sample missing
/// rates and the overall marginal rate.
Vector sample_rates(const MissingnessDraw& draw, double rate, double beta, double* marginal) {
  Vector rates(static_cast<Index>(draw.uniforms.size()));
  double missing = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < draw.uniforms.size(); ++i) {
    const double p = std::clamp(rate + beta * draw.offsets[i], 0.0, 1.0);
    const double count = (draw.uniforms[i].array() < p).cast<double>().sum();
    rates(static_cast<Index>(i)) = count / static_cast<double>(draw.uniforms[i].size());
    missing += count;
    total += static_cast<double>(draw.uniforms[i].size());
  }
  if (marginal) *marginal = missing / total;
  return rates;
}

double correlation_at(const MissingnessDraw& draw, double rate, double beta) {
  return pearson(sample_rates(draw, rate, beta, nullptr), draw.labels);
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  const int dims = cfg.n_variables;
  const int classes = cfg.n_classes;
  Rng signal_rng(cfg.seed, 1);
  Rng sample_rng(cfg.seed, 2);
  Rng missing_rng(cfg.seed, 3);
  Rng scale_rng(cfg.seed, 4);

  // Shared per-variable base, perturbed per class by class_separation.
  Matrix amp(classes, dims), freq(classes, dims), phase(classes, dims);
  for (int d = 0; d < dims; ++d) {
    const double base_amp = signal_rng.uniform(0.5, 1.5);
    const double base_freq = signal_rng.uniform(0.2, 0.8);
    const double base_phase = signal_rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int c = 0; c < classes; ++c) {
      const double s = cfg.class_separation;
      amp(c, d) = base_amp * (1.0 + s * signal_rng.uniform(-1.0, 1.0));
      freq(c, d) = base_freq * (1.0 + 0.5 * s * signal_rng.uniform(-1.0, 1.0));
      phase(c, d) = base_phase + s * signal_rng.uniform(-std::numbers::pi, std::numbers::pi);
    }
  }

  std::vector<int> labels(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) labels[i] = i % classes;
  shuffle(labels, sample_rng);

  Dataset data;
  for (int d = 0; d < dims; ++d) data.variable_names.push_back("v" + std::to_string(d));
  data.n_classes = classes;
  data.task_mode = classes > 2 ? TaskMode::Multiclass : TaskMode::Binary;
  data.task_names = {"label"};

  MissingnessDraw draw;
  draw.labels.resize(cfg.n_samples);
  std::vector<Matrix> full_values;
  std::vector<Vector> times;
  const int pad = std::max(1, static_cast<int>(std::ceil(std::log10(cfg.n_samples))));
  for (int i = 0; i < cfg.n_samples; ++i) {
    const int c = labels[i];
    const int steps = cfg.min_steps + static_cast<int>(sample_rng.below(cfg.max_steps - cfg.min_steps + 1));
    const double scale = std::exp(cfg.amplitude_jitter * scale_rng.gaussian());
    Vector ts(steps);
    Matrix values(steps, dims);
    for (int t = 0; t < steps; ++t) {
      ts(t) = static_cast<double>(t);
      for (int d = 0; d < dims; ++d) {
        values(t, d) = scale * amp(c, d) * std::sin(freq(c, d) * ts(t) + phase(c, d)) +
                       cfg.noise_std * sample_rng.gaussian();
      }
    }
    Matrix u(steps, dims);
    for (Index k = 0; k < u.size(); ++k) u.data()[k] = missing_rng.uniform();
    draw.uniforms.push_back(std::move(u));
    draw.offsets.push_back(classes > 1 ? 2.0 * c / (classes - 1) - 1.0 : 0.0);
    draw.labels(i) = c;
    full_values.push_back(std::move(values));
    times.push_back(std::move(ts));
  }

  // corr(beta) is non-decreasing in beta for the fixed uniforms; bisect on it.
  const double rate = cfg.target_missing_rate;
  const double target = cfg.correlation_strength;
  const double beta_max = std::min(rate, 1.0 - rate);
  double lo = -beta_max;
  double hi = beta_max;
  const double corr_hi = correlation_at(draw, rate, hi);
  if (corr_hi < target) {
    throw ConfigError("correlation " + std::to_string(target) + " is infeasible at missing rate " +
                      std::to_string(rate) + ": the largest achievable is " + std::to_string(corr_hi) +
                      " (the label offset cannot push per-sample rates outside [0, 1])");
  }
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (correlation_at(draw, rate, mid) < target ? lo : hi) = mid;
  }
  const double corr_lo = correlation_at(draw, rate, lo);
  const double corr_up = correlation_at(draw, rate, hi);
  const double beta = std::abs(corr_lo - target) < std::abs(corr_up - target) ? lo : hi;

  double achieved_rate = 0.0;
  const Vector rates = sample_rates(draw, rate, beta, &achieved_rate);
  const double achieved_corr = pearson(rates, draw.labels);

  for (int i = 0; i < cfg.n_samples; ++i) {
    const double p = std::clamp(rate + beta * draw.offsets[i], 0.0, 1.0);
    Matrix values = full_values[i];
    for (Index k = 0; k < values.size(); ++k) {
      if (draw.uniforms[i].data()[k] < p) values.data()[k] = missing_value();
    }
    std::string id = std::to_string(i);
    id.insert(0, static_cast<std::size_t>(std::max(0, pad - static_cast<int>(id.size()))), '0');
    Vector label(1);
    label(0) = labels[i];
    data.samples.push_back(make_sample("s" + id, times[i], std::move(values), std::move(label)));
  }

  data.metadata = {{"generator", "synthetic"},
                   {"config", to_json(cfg)},
                   {"label_offset_beta", beta},
                   {"achieved_missing_rate", achieved_rate},
                   {"achieved_correlation", achieved_corr}};
  return data;
}

}  // namespace decayrnn
