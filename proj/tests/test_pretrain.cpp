#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pest/pretrain.hpp"
#include "test_util.hpp"

namespace {

using namespace pest;
using pest::test_util::code_of;

FeatureVec unit(std::initializer_list<double> v) { return l2_normalize(Vec(v)); }

TEST(Contrastive, OrthonormalPairHandValue) {
  const std::vector<FeatureVec> z{unit({1, 0}), unit({0, 1})};
  const auto res = contrastive_loss(z, z, 1.0);
  EXPECT_NEAR(res.loss, 2.0 * std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(res.loss, 0.626524, 1e-6);
}

TEST(Contrastive, SaturatesWithSmallTemperature) {
  const std::vector<FeatureVec> z{unit({1, 0, 0}), unit({0, 1, 0}), unit({0, 0, 1})};
  double previous = contrastive_loss(z, z, 1.0).loss;
  for (double tau : {0.3, 0.1, 0.03, 0.01}) {
    const double loss = contrastive_loss(z, z, tau).loss;
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-40);
}

TEST(Contrastive, PermutationEquivariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(6);
    std::vector<FeatureVec> zi, zt;
    for (std::size_t i = 0; i < n; ++i) {
      zi.push_back(oracle::random_unit(5, rng));
      zt.push_back(oracle::random_unit(5, rng));
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    std::vector<FeatureVec> pi, pt;
    for (std::size_t i : perm) {
      pi.push_back(zi[i]);
      pt.push_back(zt[i]);
    }
    const double a = contrastive_loss(zi, zt, 0.2).loss;
    EXPECT_GE(a, 0.0);
    EXPECT_NEAR(a, contrastive_loss(pi, pt, 0.2).loss, 1e-12);
  }
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    EXPECT_LE(gradcheck::contrastive(rng), 1e-5) << "trial " << trial;
  }
}

TEST(Contrastive, Errors) {
  const std::vector<FeatureVec> one{unit({1, 0})};
  const std::vector<FeatureVec> two{unit({1, 0}), unit({0, 1})};
  const std::vector<FeatureVec> three{unit({1, 0}), unit({0, 1}), unit({1, 1})};
  EXPECT_EQ(code_of([&] { contrastive_loss(one, one, 1.0); }), ErrorCode::DimMismatch);
  EXPECT_EQ(code_of([&] { contrastive_loss(two, three, 1.0); }), ErrorCode::DimMismatch);
  EXPECT_EQ(code_of([&] { contrastive_loss(two, two, 0.0); }), ErrorCode::NonPositiveTemperature);
}

TEST(BatchRanges, FoldsShortTail) {
  using R = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(batch_ranges(10, 4), (R{{0, 4}, {4, 8}, {8, 10}}));
  EXPECT_EQ(batch_ranges(9, 4), (R{{0, 4}, {4, 9}}));
  EXPECT_EQ(batch_ranges(3, 64), (R{{0, 3}}));
}

TEST(Pretrain, ZeroEpochsRejected) {
  PretrainConfig cfg;
  cfg.epochs = 0;
  const auto task = generate_task(TaskSpec{});
  EXPECT_EQ(code_of([&] { pretrain_vlm(task, cfg); }), ErrorCode::ConfigError);
}

class PretrainDefault : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    task_ = new SyntheticTask(generate_task(TaskSpec{}));
    result_ = new PretrainResult(pretrain_vlm(*task_, PretrainConfig{}));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete task_;
  }
  static SyntheticTask* task_;
  static PretrainResult* result_;
};

SyntheticTask* PretrainDefault::task_ = nullptr;
PretrainResult* PretrainDefault::result_ = nullptr;

TEST_F(PretrainDefault, SourceZeroShotAccuracy) {
  EXPECT_GE(result_->rows.back().source_zero_shot_acc, 0.90);
  EXPECT_EQ(result_->rows.size(), PretrainConfig{}.epochs);
  EXPECT_NEAR(zero_shot_accuracy(result_->image, result_->text, task_->source_images,
                                 task_->source_labels, task_->class_names),
              result_->rows.back().source_zero_shot_acc, 0.0);
}

TEST_F(PretrainDefault, SmoothedLossDecreases) {
  // Mean loss over consecutive 5-epoch windows never goes up.
  const auto& rows = result_->rows;
  double previous = 1e300;
  for (std::size_t start = 0; start + 5 <= rows.size(); start += 5) {
    double mean = 0.0;
    for (std::size_t i = start; i < start + 5; ++i) mean += rows[i].loss / 5.0;
    EXPECT_LE(mean, previous) << "window starting at epoch " << rows[start].epoch;
    previous = mean;
  }
}

TEST_F(PretrainDefault, BitwiseDeterministic) {
  const auto again = pretrain_vlm(*task_, PretrainConfig{});
  EXPECT_EQ(encoder_bytes(again.image), encoder_bytes(result_->image));
  EXPECT_EQ(encoder_bytes(again.text), encoder_bytes(result_->text));
}

TEST_F(PretrainDefault, RolesAndShapes) {
  EXPECT_EQ(result_->image.role, EncoderRole::image);
  EXPECT_EQ(result_->text.role, EncoderRole::text);
  EXPECT_EQ(result_->image.in_dim(), task_->spec.input_dim);
  EXPECT_EQ(result_->image.out_dim(), PretrainConfig{}.embed_dim);
}

TEST(Pretrain, SeedChangesEncoders) {
  const auto task = generate_task(TaskSpec{});
  PretrainConfig cfg;
  cfg.epochs = 2;
  const auto a = pretrain_vlm(task, cfg);
  cfg.seed = 43;
  const auto b = pretrain_vlm(task, cfg);
  EXPECT_NE(parameter_hash(a.image), parameter_hash(b.image));
}

}  // namespace
