#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pest/optim.hpp"
#include "pest/rng.hpp"
#include "test_util.hpp"

namespace {

using namespace pest;
using pest::test_util::code_of;

TEST(AdamW, DecayOnlyStep) {
  AdamWState s(1, AdamWConfig{.weight_decay = 0.05});
  std::vector<double> p{1.0};
  const std::vector<double> g{0.0};
  adamw_apply(s, p, g, 0.1);
  EXPECT_NEAR(p[0], 0.995, 1e-15);
}

TEST(AdamW, FirstStepIsUnitNormalized) {
  AdamWState s(1, AdamWConfig{.weight_decay = 0.0});
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  adamw_apply(s, p, g, 1e-3);
  EXPECT_NEAR(p[0], -1e-3, 1e-10);
  EXPECT_EQ(s.step, 1u);
}

// Scripted two-step trace written out from the update rule.
TEST(AdamW, TwoStepTrace) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-3;
  double p = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    p = p - lr * (mh / (std::sqrt(vh) + eps));
  }

  AdamWState s(1, AdamWConfig{.weight_decay = 0.0});
  std::vector<double> params{0.5};
  const std::vector<double> g{1.0};
  adamw_apply(s, params, g, lr);
  adamw_apply(s, params, g, lr);
  EXPECT_NEAR(params[0], p, 1e-12);
}

TEST(AdamW, ZeroGradNoDecayIsStationary) {
  Rng rng(3);
  std::vector<double> p(10);
  for (double& x : p) x = rng.normal();
  const auto start = p;
  AdamWState s(p.size(), AdamWConfig{.weight_decay = 0.0});
  const std::vector<double> g(p.size(), 0.0);
  for (int i = 0; i < 50; ++i) adamw_apply(s, p, g, 0.1);
  EXPECT_EQ(p, start);
}

TEST(AdamW, FirstStepMagnitudeBound) {
  Rng rng(5);
  const double bound = 1.0 / (1.0 - 0.9) * (1.0 / std::sqrt(1.0 - 0.999));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(4, 0.0), g(4);
    for (double& x : g) x = rng.normal(0.0, std::exp(rng.uniform(-8.0, 8.0)));
    AdamWState s(4, AdamWConfig{.weight_decay = 0.0});
    adamw_apply(s, p, g, 1.0);
    for (double x : p) EXPECT_LE(std::abs(x), bound);
  }
}

TEST(AdamW, ShapeMismatch) {
  AdamWState s(2, AdamWConfig{});
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{1.0};
  EXPECT_EQ(code_of([&] { adamw_apply(s, p, g, 0.1); }), ErrorCode::ShapeMismatch);
  std::vector<double> p3{1.0, 2.0, 3.0};
  const std::vector<double> g3{1.0, 2.0, 3.0};
  EXPECT_EQ(code_of([&] { adamw_apply(s, p3, g3, 0.1); }), ErrorCode::ShapeMismatch);
}

TEST(Cosine, Endpoints) {
  const CosineSchedule s(1e-5, 100, 1e-7);
  EXPECT_DOUBLE_EQ(s.lr_at(0), 1e-5);
  EXPECT_NEAR(s.lr_at(100), 1e-7, 1e-20);
}

TEST(Cosine, Midpoint) {
  const CosineSchedule s(1e-5, 100);
  EXPECT_NEAR(s.lr_at(50), 5e-6, 1e-18);
}

TEST(Cosine, NonIncreasing) {
  const CosineSchedule s(3e-3, 257, 1e-4);
  for (std::size_t t = 1; t <= 257; ++t) EXPECT_LE(s.lr_at(t), s.lr_at(t - 1));
}

TEST(Cosine, Errors) {
  const CosineSchedule s(1e-3, 10);
  EXPECT_EQ(code_of([&] { s.lr_at(11); }), ErrorCode::StepOutOfRange);
  EXPECT_EQ(code_of([] { CosineSchedule(1e-3, 10, 1e-2); }), ErrorCode::ConfigError);
}

}  // namespace
