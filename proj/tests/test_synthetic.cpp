#include <gtest/gtest.h>

#include <cmath>

#include "decayrnn/timeseries.hpp"

using namespace decayrnn;

namespace {

// Per-sample overall missing fraction and integer labels, measured directly.
void measure(const Dataset& data, Vector* rates, Vector* labels, double* marginal) {
  rates->resize(static_cast<Index>(data.samples.size()));
  labels->resize(rates->size());
  double missing = 0.0, total = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const double m = static_cast<double>(s.mask.size()) - s.mask.sum();
    (*rates)(static_cast<Index>(i)) = m / static_cast<double>(s.mask.size());
    (*labels)(static_cast<Index>(i)) = s.label(0);
    missing += m;
    total += static_cast<double>(s.mask.size());
  }
  *marginal = missing / total;
}

double plain_pearson(const Vector& a, const Vector& b) {
  const Vector ca = (a.array() - a.mean()).matrix();
  const Vector cb = (b.array() - b.mean()).matrix();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

}  // namespace

TEST(Synthetic, ZeroStrengthIsUncorrelated) {
  SyntheticConfig cfg;
  cfg.correlation_strength = 0.0;
  const Dataset data = generate_synthetic(cfg);
  ASSERT_EQ(data.samples.size(), 378u);
  Vector rates, labels;
  double marginal = 0.0;
  measure(data, &rates, &labels, &marginal);
  EXPECT_LT(std::abs(plain_pearson(rates, labels)), 0.1);
  EXPECT_NEAR(marginal, 0.5, 0.02);
}

TEST(Synthetic, HighStrengthKeepsMarginalRate) {
  for (double strength : {0.3, 0.6, 0.9}) {
    SyntheticConfig cfg;
    cfg.correlation_strength = strength;
    const Dataset data = generate_synthetic(cfg);
    Vector rates, labels;
    double marginal = 0.0;
    measure(data, &rates, &labels, &marginal);
    EXPECT_NEAR(marginal, 0.5, 0.02) << strength;
    EXPECT_NEAR(plain_pearson(rates, labels), strength, 0.02) << strength;
  }
}

TEST(Synthetic, MetadataIsMeasured) {
  SyntheticConfig cfg;
  cfg.correlation_strength = 0.6;
  cfg.seed = 4;
  const Dataset data = generate_synthetic(cfg);
  Vector rates, labels;
  double marginal = 0.0;
  measure(data, &rates, &labels, &marginal);
  EXPECT_NEAR(data.metadata.at("achieved_missing_rate").get<double>(), marginal, 1e-12);
  EXPECT_NEAR(data.metadata.at("achieved_correlation").get<double>(), plain_pearson(rates, labels), 1e-12);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticConfig cfg;
  cfg.correlation_strength = 0.3;
  cfg.seed = 17;
  EXPECT_EQ(format_data_csv(generate_synthetic(cfg)), format_data_csv(generate_synthetic(cfg)));
  EXPECT_EQ(format_labels_csv(generate_synthetic(cfg)), format_labels_csv(generate_synthetic(cfg)));
  SyntheticConfig other = cfg;
  other.seed = 18;
  EXPECT_NE(format_data_csv(generate_synthetic(cfg)), format_data_csv(generate_synthetic(other)));
}

TEST(Synthetic, ClassesAreBalancedAndShapesConsistent) {
  SyntheticConfig cfg;
  const Dataset data = generate_synthetic(cfg);
  EXPECT_EQ(data.task_mode, TaskMode::Multiclass);
  EXPECT_EQ(data.outputs(), 5);
  std::vector<int> counts(5, 0);
  for (const auto& s : data.samples) {
    ++counts[static_cast<std::size_t>(s.label(0))];
    EXPECT_EQ(s.variables(), cfg.n_variables);
    EXPECT_GE(s.steps(), cfg.min_steps);
    EXPECT_LE(s.steps(), cfg.max_steps);
  }
  for (int c : counts) EXPECT_NEAR(c, 378 / 5, 1);
}

TEST(Synthetic, InfeasibleCombinationIsConfigError) {
  SyntheticConfig cfg;
  cfg.target_missing_rate = 0.01;
  cfg.correlation_strength = 0.99;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Synthetic, OutOfRangeConfigIsConfigError) {
  SyntheticConfig cfg;
  cfg.target_missing_rate = 1.0;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = SyntheticConfig{};
  cfg.correlation_strength = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Synthetic, AmplitudeJitterScalesWholeSamples) {
  SyntheticConfig cfg;
  cfg.n_samples = 40;
  cfg.noise_std = 0.0;
  cfg.correlation_strength = 0.6;
  const Dataset plain = generate_synthetic(cfg);
  cfg.amplitude_jitter = 0.8;
  const Dataset jittered = generate_synthetic(cfg);
  double lo = 1e300, hi = 0.0;
  for (std::size_t i = 0; i < plain.samples.size(); ++i) {
    const Sample& a = plain.samples[i];
    const Sample& b = jittered.samples[i];
    ASSERT_EQ(a.mask, b.mask);  // missingness and labels use their own streams
    ASSERT_EQ(a.label, b.label);
    double scale = 0.0;
    for (Index k = 0; k < a.values.size(); ++k) {
      if (a.mask.data()[k] < 0.5 || std::abs(a.values.data()[k]) < 1e-3) continue;
      const double r = b.values.data()[k] / a.values.data()[k];
      if (scale == 0.0) scale = r;
      EXPECT_NEAR(r, scale, 1e-9 * scale);
    }
    EXPECT_GT(scale, 0.0);
    lo = std::min(lo, scale);
    hi = std::max(hi, scale);
  }
  EXPECT_GT(hi / lo, 2.0);
  cfg.amplitude_jitter = -0.1;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}
