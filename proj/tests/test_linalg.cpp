#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "pest/linalg.hpp"
#include "pest/rng.hpp"
#include "test_util.hpp"

namespace {

using namespace pest;

using pest::test_util::code_of;

TEST(L2Normalize, UnitInputIsFixedPoint) {
  const auto f = l2_normalize(Vec{1.0, 0.0, 0.0});
  EXPECT_EQ(f.values(), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(L2Normalize, ThreeFourFive) {
  const auto f = l2_normalize(Vec{3.0, 4.0});
  EXPECT_NEAR(f[0], 0.6, 1e-15);
  EXPECT_NEAR(f[1], 0.8, 1e-15);
}

TEST(L2Normalize, ZeroVectorRaises) {
  EXPECT_EQ(code_of([] { l2_normalize(Vec{0.0, 0.0}); }), ErrorCode::ZeroNorm);
  EXPECT_EQ(code_of([] { l2_normalize(Vec{1e-13, 0.0}); }), ErrorCode::ZeroNorm);
}

TEST(FeatureVec, FromUnitChecksNorm) {
  EXPECT_NO_THROW(FeatureVec::from_unit({0.6, 0.8}));
  EXPECT_EQ(code_of([] { FeatureVec::from_unit({1.0, 1.0}); }), ErrorCode::ZeroNorm);
}

TEST(Dot, SmallCases) {
  const auto e1 = l2_normalize(Vec{1.0, 0.0});
  const auto e2 = l2_normalize(Vec{0.0, 1.0});
  const auto neg = l2_normalize(Vec{-1.0, 0.0});
  EXPECT_DOUBLE_EQ(dot(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(dot(e1, e2), 0.0);
  EXPECT_DOUBLE_EQ(dot(e1, neg), -1.0);
}

TEST(Dot, DimMismatchRaises) {
  const auto a = l2_normalize(Vec{1.0, 0.0});
  const auto b = l2_normalize(Vec{1.0, 0.0, 0.0});
  EXPECT_EQ(code_of([&] { dot(a, b); }), ErrorCode::DimMismatch);
}

TEST(Dot, PositiveScaleInvariance) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec v = oracle::random_vec(6, rng);
    const FeatureVec u = oracle::random_unit(6, rng);
    const double c = std::exp(rng.uniform(-10.0, 10.0));
    Vec scaled = v;
    for (double& x : scaled.span()) x *= c;
    EXPECT_NEAR(dot(l2_normalize(scaled), u), dot(l2_normalize(v), u), 1e-9);
  }
}

TEST(Matrix, MatvecMatmul) {
  const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  const Vec y = matvec(a, Vec{1.0, 0.0, -1.0}.span());
  EXPECT_EQ(y, (Vec{-2.0, -2.0}));
  const Matrix b(3, 1, {1, 1, 1});
  const Matrix ab = matmul(a, b);
  EXPECT_EQ(ab, Matrix(2, 1, {6, 15}));
  EXPECT_EQ(code_of([] { Matrix(2, 2, std::vector<double>{1.0}); }), ErrorCode::ShapeMismatch);
}

TEST(Argmax, LowestIndexOnTies) {
  const std::vector<double> v{0.5, 0.5, 0.1};
  EXPECT_EQ(argmax(v), 0u);
  const std::vector<double> w{0.1, 0.7, 0.7};
  EXPECT_EQ(argmax(w), 1u);
}

TEST(CrossEntropy, SymmetricLogits) {
  const std::vector<double> logits{0.0, 0.0};
  EXPECT_NEAR(softmax_cross_entropy(logits, 0, 1.0).loss, std::log(2.0), 1e-15);
}

TEST(CrossEntropy, Saturated) {
  const std::vector<double> logits{100.0, 0.0};
  EXPECT_LT(softmax_cross_entropy(logits, 0, 1.0).loss, 1e-40);
}

TEST(CrossEntropy, ClosedForm) {
  const std::vector<double> logits{1.0, 0.0};
  const double expected = std::log1p(std::exp(-1.0));
  EXPECT_NEAR(softmax_cross_entropy(logits, 0, 1.0).loss, expected, 1e-15);
  EXPECT_NEAR(expected, 0.313262, 1e-6);
}

TEST(CrossEntropy, HugeGapUnderflowSafe) {
  const std::vector<double> logits{1e3, 0.0, -5.0};
  const auto ce = softmax_cross_entropy(logits, 0, 1.0);
  EXPECT_GE(ce.loss, 0.0);
  EXPECT_LT(ce.loss, 1e-300);
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy(logits, 2, 1.0).loss));
}

TEST(CrossEntropy, Errors) {
  const std::vector<double> logits{1.0, 0.0};
  EXPECT_EQ(code_of([&] { softmax_cross_entropy(logits, 2, 1.0); }), ErrorCode::BadLabel);
  EXPECT_EQ(code_of([&] { softmax_cross_entropy(logits, 0, 0.0); }),
            ErrorCode::NonPositiveTemperature);
  EXPECT_EQ(code_of([&] { softmax_cross_entropy(logits, 0, -1.0); }),
            ErrorCode::NonPositiveTemperature);
  const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN(), 0.0};
  EXPECT_EQ(code_of([&] { softmax_cross_entropy(bad, 0, 1.0); }), ErrorCode::NumericError);
}

TEST(CrossEntropy, MatchesOracleAndIsNonNegative) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.index(15);
    std::vector<double> logits(n);
    for (double& l : logits) l = rng.normal(0.0, 3.0);
    const std::size_t label = rng.index(n);
    const double tau = rng.uniform(0.05, 2.0);
    const auto ce = softmax_cross_entropy(logits, label, tau);
    EXPECT_GE(ce.loss, 0.0);
    EXPECT_NEAR(ce.loss, oracle::cross_entropy(logits, label, tau), 1e-10);
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(15);
    std::vector<double> logits(n);
    for (double& l : logits) l = rng.normal();
    const std::size_t label = rng.index(n);
    const double tau = rng.uniform(0.5, 2.0);
    const auto analytic = softmax_cross_entropy(logits, label, tau).grad;
    const auto numeric = oracle::central_difference(
        [&](const oracle::Dense& x) { return softmax_cross_entropy(x, label, tau).loss; }, logits);
    EXPECT_LE(oracle::relative_error(analytic, numeric), 1e-6);
  }
}

}  // namespace
