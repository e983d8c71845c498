#include <gtest/gtest.h>

#include <cmath>

#include "decayrnn/metrics.hpp"
#include "decayrnn/training.hpp"

using namespace decayrnn;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// D=2, T=3 binary set whose label is the sign of the first variable.
Dataset separable_toy(int n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.variable_names = {"a", "b"};
  data.task_mode = TaskMode::Binary;
  data.task_names = {"y"};
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    Matrix values(3, 2);
    for (Index t = 0; t < 3; ++t) {
      values(t, 0) = (label ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
      values(t, 1) = rng.gaussian();
    }
    if (rng.bernoulli(0.3)) values(1, 1) = missing_value();
    data.samples.push_back(make_sample("s" + std::to_string(i), vec({0, 1, 2}), values, vec({double(label)})));
  }
  return data;
}

FoldSplit simple_split(std::size_t n) {
  FoldSplit s;
  for (std::size_t i = 0; i < n; ++i) (i % 5 == 0 ? s.validation : s.train).push_back(i);
  return s;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.patience = 50;
  cfg.hidden = 4;
  cfg.batch_size = 8;
  return cfg;
}

}  // namespace

TEST(Adam, FirstStepMagnitude) {
  TrainConfig cfg;
  AdamState state;
  Vector params = vec({0.0});
  adam_step(state, params, vec({1.0}), cfg);
  // Bias-corrected moments are exactly g and g^2 on the first step.
  EXPECT_NEAR(params(0), -cfg.learning_rate / (1.0 + cfg.epsilon), 1e-18);
  EXPECT_NEAR(std::abs(params(0)), 1e-3, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  TrainConfig cfg;
  AdamState state;
  Vector params = vec({0.3, -2.0});
  adam_step(state, params, Vector::Zero(2), cfg);
  EXPECT_EQ(params, vec({0.3, -2.0}));
}

TEST(Adam, NonFiniteGradientIsRejectedBeforeUpdate) {
  TrainConfig cfg;
  AdamState state;
  Vector params = vec({0.3, -2.0});
  EXPECT_THROW(adam_step(state, params, vec({1.0, std::nan("")}), cfg), NumericalError);
  EXPECT_EQ(params, vec({0.3, -2.0}));
  EXPECT_EQ(state.step, 0);
}

TEST(Adam, IdenticalRunsIdenticalTrajectories) {
  TrainConfig cfg;
  AdamState a, b;
  Vector pa = vec({1, 2, 3}), pb = pa;
  Rng ra(9), rb(9);
  for (int k = 0; k < 50; ++k) {
    Vector ga(3), gb(3);
    for (Index i = 0; i < 3; ++i) {
      ga(i) = ra.gaussian();
      gb(i) = rb.gaussian();
    }
    adam_step(a, pa, ga, cfg);
    adam_step(b, pb, gb, cfg);
  }
  EXPECT_EQ(pa, pb);
}

TEST(EarlyStop, PatienceOneOnDecreasingScores) {
  EarlyStopping stop(1);
  EXPECT_TRUE(stop.update(1, 0.9));
  EXPECT_FALSE(stop.should_stop());
  EXPECT_FALSE(stop.update(2, 0.8));
  EXPECT_TRUE(stop.should_stop());
  EXPECT_EQ(stop.best_epoch(), 1);
  EXPECT_EQ(stop.best_score(), 0.9);
}

TEST(EarlyStop, TiesDoNotCountAsImprovement) {
  EarlyStopping stop(2);
  stop.update(1, 0.7);
  EXPECT_FALSE(stop.update(2, 0.7));
  EXPECT_FALSE(stop.update(3, 0.7));
  EXPECT_TRUE(stop.should_stop());
}

TEST(Train, StopsOnDecreasingValidationAndReturnsBestEpoch) {
  const Dataset data = separable_toy(40, 1);
  TrainConfig cfg = quick_config();
  cfg.patience = 1;
  const TrainResult r = fit(CellKind::GruMean, data, simple_split(40), cfg);
  ASSERT_GE(r.history.size(), 2u);
  // Stopped exactly one epoch after the last improvement.
  EXPECT_EQ(static_cast<int>(r.history.size()), std::min(cfg.max_epochs, r.best_epoch + 1));
}

TEST(Train, ReturnedWeightsScoreTheBestValidationAuc) {
  const Dataset data = separable_toy(60, 2);
  const FoldSplit split = simple_split(60);
  const TrainResult r = fit(CellKind::GruD, data, split, quick_config());
  double best = 0.0;
  for (const auto& e : r.history) best = std::max(best, e.val_auc);
  EXPECT_EQ(r.best_val_auc, best);
  std::vector<const Sample*> val;
  for (auto i : split.validation) val.push_back(&data.samples[i]);
  EXPECT_EQ(mean_auc(output_aucs(predict(r.model, val), val, data.task_mode)), best);
}

TEST(Train, SeparableToyReachesLowLoss) {
  const Dataset data = separable_toy(64, 3);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.hidden = 8;
  cfg.batch_size = 8;
  // Train-phase loss is measured under dropout and batch statistics. Batch norm
  // pins the logit scale to bn_scale, which Adam grows by about lr per step, so
  // the optimizer sanity run measures the plain head.
  cfg.head_dropout = 0.0;
  cfg.recurrent_dropout = 0.0;
  cfg.batch_norm = false;
  const TrainResult r = fit(CellKind::GruMean, data, simple_split(64), cfg);
  double lowest = 1e9;
  for (const auto& e : r.history) lowest = std::min(lowest, e.train_loss);
  EXPECT_LT(lowest, 0.1);
}

TEST(Train, SeparableToySeparatesWithDefaultHead) {
  const Dataset data = separable_toy(64, 3);
  TrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.hidden = 8;
  const TrainResult r = fit(CellKind::GruMean, data, simple_split(64), cfg);
  EXPECT_EQ(r.best_val_auc, 1.0);
}

TEST(Train, SameSeedBitIdenticalHistory) {
  const Dataset data = separable_toy(40, 4);
  for (CellKind kind : {CellKind::GruD, CellKind::GruImp, CellKind::LstmMean}) {
    const TrainResult a = fit(kind, data, simple_split(40), quick_config());
    const TrainResult b = fit(kind, data, simple_split(40), quick_config());
    EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history)) << to_string(kind);
    EXPECT_EQ(a.model.flatten_trainable(), b.model.flatten_trainable());
  }
}

TEST(Train, WorkerCountDoesNotChangeResults) {
  const Dataset data = separable_toy(40, 4);
  TrainConfig single = quick_config();
  TrainConfig pooled = quick_config();
  pooled.threads = 3;
  for (CellKind kind : {CellKind::GruD, CellKind::GruImp}) {
    const TrainResult a = fit(kind, data, simple_split(40), single);
    const TrainResult b = fit(kind, data, simple_split(40), pooled);
    EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history)) << to_string(kind);
    EXPECT_EQ(a.model.flatten_trainable(), b.model.flatten_trainable());
  }
}

TEST(TrainProperty, FullBatchLossNonIncreasingWithoutNoise) {
  const Dataset data = separable_toy(32, 5);
  int passing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.head_dropout = 0.0;
    cfg.recurrent_dropout = 0.0;
    cfg.batch_norm = false;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 1000;  // one step per epoch on the fixed training batch
    cfg.max_epochs = 5;
    cfg.patience = 10;
    cfg.hidden = 4;
    const TrainResult r = fit(CellKind::GruMean, data, simple_split(32), cfg);
    bool ok = true;
    for (std::size_t e = 1; e < r.history.size(); ++e) ok = ok && r.history[e].train_loss <= r.history[e - 1].train_loss;
    passing += ok ? 1 : 0;
  }
  EXPECT_GE(passing, 9);
}

TEST(Train, LossIsAffineInLambda) {
  const Dataset raw = separable_toy(30, 6);
  Dataset data = raw;
  const FoldSplit split = simple_split(30);
  normalize(data, split.train);
  const TrainResult r = fit(CellKind::GruImp, raw, split, quick_config());
  const auto [base, nll] = evaluate_loss(r.model, data, split.train, 0.0);
  for (double lambda : {0.1, 1.0, 3.7}) {
    EXPECT_NEAR(evaluate_loss(r.model, data, split.train, lambda).first, base + lambda * nll, 1e-12);
  }
}

TEST(Train, ImputationTestModeDeterministic) {
  const Dataset data = separable_toy(30, 7);
  const TrainResult r = fit(CellKind::GruImp, data, simple_split(30), quick_config());
  std::vector<const Sample*> all;
  for (const auto& s : data.samples) all.push_back(&s);
  EXPECT_EQ(predict(r.model, all), predict(r.model, all));
}

TEST(Train, EmptySplitsRejected) {
  const Dataset data = separable_toy(10, 8);
  FoldSplit split = simple_split(10);
  split.validation.clear();
  EXPECT_THROW(fit(CellKind::GruMean, data, split, quick_config()), ConfigError);
}

TEST(Dropout, RateZeroIsIdentity) {
  Rng rng(10);
  const CellParams p = init_cell_params(CellKind::GruD, 3, 4, rng);
  EXPECT_TRUE(recurrent_dropout_masks(p, 0.0, rng).empty());
}

TEST(Dropout, InvertedScalingIsUnbiased) {
  Rng rng(11);
  const CellParams p = init_cell_params(CellKind::GruD, 20, 30, rng);
  const WeightMasks m = recurrent_dropout_masks(p, 0.3, rng);
  ASSERT_EQ(m.W.rows(), p.W.rows());
  ASSERT_EQ(m.V.cols(), p.V.cols());
  const double keep = 1.0 / 0.7;
  for (Index i = 0; i < m.U.size(); ++i) {
    const double v = m.U.data()[i];
    ASSERT_TRUE(v == 0.0 || std::abs(v - keep) < 1e-15);
  }
  EXPECT_NEAR(m.U.mean(), 1.0, 0.05);
  EXPECT_NEAR(m.W.mean(), 1.0, 0.05);
}

TEST(Dropout, MasksAreConstantAcrossSteps) {
  // Forward with masks equals a dropout-free forward on the masked weights,
  // which is only possible if every step reuses the same masks.
  Rng rng(12);
  const CellParams p = init_cell_params(CellKind::GruD, 2, 3, rng);
  const WeightMasks masks = recurrent_dropout_masks(p, 0.3, rng);
  const Dataset data = separable_toy(1, 13);
  ForwardOptions opt;
  opt.mode = Mode::Train;
  opt.dropout = &masks;
  const SequenceTrace with = forward_sequence(CellKind::GruD, p, data.samples[0], Vector::Zero(2), opt);
  const SequenceTrace plain =
      forward_sequence(CellKind::GruD, apply_weight_masks(p, masks), data.samples[0], Vector::Zero(2));
  EXPECT_EQ(with.h_last, plain.h_last);
}

TEST(Config, StrictJson) {
  EXPECT_THROW(train_config_from_json({{"learning_rte", 0.1}}), ConfigError);
  EXPECT_EQ(train_config_from_json({{"patience", 4}}).patience, 4);
  const TrainConfig round = train_config_from_json(to_json(quick_config()));
  EXPECT_EQ(to_json(round), to_json(quick_config()));
}

TEST(Config, RangesValidated) {
  TrainConfig cfg;
  cfg.patience = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.head_dropout = 1.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.lambda = -1.0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Logistic, FeatureLength) {
  const Dataset data = separable_toy(2, 14);
  EXPECT_EQ(logistic_features(data.samples[0], 1.0, 5, false).size(), 5 * 2);
  EXPECT_EQ(logistic_features(data.samples[0], 1.0, 5, true).size(), 5 * 2 * 2);
}

TEST(Logistic, FillRules) {
  Matrix values(3, 1);
  values << missing_value(), 2.0, missing_value();
  const Sample s = make_sample("a", vec({0, 1, 2}), values, vec({0}));
  // Leading gap back-filled, trailing gap forward-filled, mask appended.
  EXPECT_EQ(logistic_features(s, 1.0, 4, true), vec({2, 2, 2, 2, 0, 1, 0, 0}));
}

TEST(Logistic, Deterministic) {
  const Dataset data = separable_toy(40, 15);
  TrainConfig cfg = quick_config();
  const LogisticResult a = logistic_baseline(data, simple_split(40), 1.0, true, cfg);
  const LogisticResult b = logistic_baseline(data, simple_split(40), 1.0, true, cfg);
  EXPECT_EQ(a.model.weight, b.model.weight);
  EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history));
}
