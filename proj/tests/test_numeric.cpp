#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "decayrnn/format.hpp"
#include "decayrnn/numeric.hpp"

using namespace decayrnn;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST(Matvec, IdentityReturnsInput) {
  const Matrix eye = Matrix::Identity(3, 3);
  EXPECT_EQ(matvec(eye, vec({1, 2, 3})), vec({1, 2, 3}));
}

TEST(Matvec, ZeroMatrixAnnihilates) {
  EXPECT_EQ(matvec(Matrix(Matrix::Zero(2, 2)), vec({5, 7})), vec({0, 0}));
}

TEST(Matvec, HandArithmetic) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  EXPECT_EQ(matvec(a, vec({1, 1})), vec({3, 7}));
}

TEST(Matvec, DimensionMismatchThrows) {
  EXPECT_THROW(matvec(Matrix(Matrix::Zero(2, 3)), vec({1, 2})), ArgumentError);
}

TEST(Matrix, StorageIsRowMajor) {
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(a.data()[1], 2.0);
  EXPECT_EQ(a.data()[3], 4.0);
}

TEST(Activations, Examples) {
  EXPECT_DOUBLE_EQ(sigmoid(vec({0}))(0), 0.5);
  const Vector s = softmax(vec({0, 0}));
  EXPECT_DOUBLE_EQ(s(0), 0.5);
  EXPECT_DOUBLE_EQ(s(1), 0.5);
  EXPECT_NEAR(decayrnn::tanh(vec({1}))(0), 0.7615941559557649, 1e-15);
}

TEST(Activations, Ranges) {
  const Vector x = vec({-30, -2, -1e-3, 0, 1e-3, 2, 30});
  const Vector s = sigmoid(x);
  const Vector t = decayrnn::tanh(x);
  for (Index i = 0; i < x.size(); ++i) {
    EXPECT_GT(s(i), 0.0);
    EXPECT_LT(s(i), 1.0);
    EXPECT_GE(t(i), -1.0);
    EXPECT_LE(t(i), 1.0);
  }
}

TEST(ActivationsProperty, SigmoidReflection) {
  Rng rng(11);
  for (int k = 0; k < 10000; ++k) {
    const double x = rng.uniform(-40.0, 40.0);
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15) << x;
  }
}

TEST(ActivationsProperty, SoftmaxSumsToOneUnderLargeShifts) {
  Rng rng(12);
  for (int k = 0; k < 2000; ++k) {
    Vector v(1 + static_cast<Index>(rng.below(9)));
    for (Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-1e3, 1e3);
    const Vector s = softmax(v);
    EXPECT_TRUE(s.allFinite());
    EXPECT_NEAR(s.sum(), 1.0, 1e-12);
    EXPECT_TRUE((s.array() >= 0.0).all() && (s.array() <= 1.0).all());
    // Shift invariance.
    const Vector shifted = softmax((v.array() + 123.0).matrix());
    EXPECT_LT((s - shifted).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(draw_uniform(a), draw_uniform(b));
    EXPECT_EQ(draw_gaussian(a), draw_gaussian(b));
  }
}

TEST(Rng, StreamsDiffer) {
  Rng a(42, 1), b(42, 2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, ForkDoesNotAdvanceParent) {
  Rng a(5), b(5);
  Rng child = a.fork(9);
  child.uniform();
  EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, SeedingFollowsSplitMixIntoMt19937_64) {
  // Independent reimplementation of the documented seeding recipe.
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  for (std::uint64_t seed : {0ULL, 1ULL, 123456789ULL}) {
    for (std::uint64_t stream : {0ULL, 3ULL}) {
      std::mt19937_64 reference(splitmix(splitmix(seed) ^ splitmix(stream + 0x632be59bd9b4e019ULL)));
      Rng rng(seed, stream);
      for (int i = 0; i < 5; ++i) EXPECT_EQ(rng.next_u64(), reference());
    }
  }
}

TEST(Rng, BernoulliDegenerate) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(draw_bernoulli(rng, 0.0), 0);
    EXPECT_EQ(draw_bernoulli(rng, 1.0), 1);
  }
}

TEST(Rng, BernoulliRejectsBadProbability) {
  Rng rng(3);
  EXPECT_THROW(draw_bernoulli(rng, -0.1), ArgumentError);
  EXPECT_THROW(draw_bernoulli(rng, 1.5), ArgumentError);
  EXPECT_THROW(draw_bernoulli(rng, std::nan("")), ArgumentError);
}

TEST(Rng, GaussianMoments) {
  Rng rng(2024);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = draw_gaussian(rng);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.05);
}

TEST(Rng, UniformRange) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
  }
  EXPECT_THROW(rng.below(0), ArgumentError);
}

TEST(Shuffle, IsAPermutationAndSeeded) {
  std::vector<int> a(50), b(50);
  for (int i = 0; i < 50; ++i) a[i] = b[i] = i;
  Rng r1(1), r2(1);
  shuffle(a, r1);
  shuffle(b, r2);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Sentinel, MissingIsNaN) {
  EXPECT_TRUE(is_missing(missing_value()));
  EXPECT_FALSE(is_missing(0.0));
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(2.0), "2");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_number(x)), x);
  EXPECT_EQ(format_human(0.123456789), "0.123457");
}

TEST(Format, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
