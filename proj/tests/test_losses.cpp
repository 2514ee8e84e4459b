#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "poseforge/errors.hpp"
#include "poseforge/losses.hpp"
#include "poseforge/optim.hpp"
#include "test_support.hpp"

using namespace poseforge;

namespace {

const double pi = std::numbers::pi;

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from_data({1, n}, std::move(v));
}

double loss_of(const Tensor& px, const Tensor& pq, const Tensor& gx, const Tensor& gq, double sx, double sq) {
  return pose_loss(px, pq, gx, gq, PoseLossState(sx, sq)).total.item();
}

}  // namespace

TEST(PoseLoss, PerfectPredictionWithZeroWeightsIsZero) {
  const Tensor x = row({1.0, -2.0, 0.5});
  const Tensor q = row({0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ(loss_of(x, q, x, q, 0.0, 0.0), 0.0);
}

TEST(PoseLoss, UnitTranslationErrorGivesOne) {
  const Tensor q = row({1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(loss_of(row({1, 0, 0}), q, row({0, 0, 0}), q, 0.0, 0.0), 1.0);
}

TEST(PoseLoss, WeightsFollowTheLogVarianceForm) {
  // L_x = 5 (3-4-5 triangle), L_q = |(1,0,0,0) - (0,1,0,0)| = sqrt 2.
  const double sx = 0.3, sq = -1.2;
  const double expect = 5.0 * std::exp(-sx) + sx + std::sqrt(2.0) * std::exp(-sq) + sq;
  EXPECT_NEAR(loss_of(row({3, 4, 0}), row({0, 2, 0, 0}), row({0, 0, 0}), row({1, 0, 0, 0}), sx, sq), expect, 1e-14);
}

TEST(PoseLoss, TranslationWeightSettlesAtLogOfTheError) {
  const double lx = 2.7;
  PoseLossState state(0.0, 0.0);
  Adam opt({{"s_x", state.s_x}}, {0.01});
  const Tensor q = row({1, 0, 0, 0});
  for (int i = 0; i < 4000; ++i) {
    opt.zero_grad();
    pose_loss(row({lx, 0, 0}), q, row({0, 0, 0}), q, state).total.backward();
    opt.step();
  }
  EXPECT_NEAR(state.s_x[0], std::log(lx), 1e-3);
}

TEST(PoseLoss, DoubleCoverChangesTheRotationTerm) {
  const Tensor x = row({0, 0, 0});
  const Tensor q = row({0.5, 0.5, 0.5, 0.5});
  const Tensor neg_q = row({-0.5, -0.5, -0.5, -0.5});
  EXPECT_EQ(loss_of(x, q, x, q, 0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(loss_of(x, q, x, neg_q, 0.0, 0.0), 2.0);
}

TEST(PoseLoss, QuaternionScaleDoesNotMatter) {
  const Tensor x = row({0.1, 0.2, 0.3}), gx = row({0.0, 0.5, -0.2});
  const Tensor gq = row({std::sqrt(0.5), 0.0, std::sqrt(0.5), 0.0});
  const std::vector<double> q{0.9, -0.3, 0.2, 0.4};
  const double base = loss_of(x, row(q), gx, gq, 0.2, -3.0);
  // Below k ~ 0.1 the 1e-16 floor under the square root starts to show.
  for (double k : {0.1, 0.5, 7.0, 1e4, 1e8}) {
    std::vector<double> scaled = q;
    for (auto& v : scaled) v *= k;
    EXPECT_NEAR(loss_of(x, row(scaled), gx, gq, 0.2, -3.0), base, 1e-12) << k;
  }
}

TEST(PoseLoss, ZeroQuaternionStaysFinite) {
  Tensor q = Tensor::parameter({1, 4}, {0, 0, 0, 0});
  const auto terms = pose_loss(row({0, 0, 0}), q, row({0, 0, 0}), row({1, 0, 0, 0}), PoseLossState());
  EXPECT_TRUE(std::isfinite(terms.total.item()));
  terms.total.backward();
  for (double g : q.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(PoseLoss, GradientsOfPredictionsAndWeights) {
  std::mt19937_64 r(1);
  Tensor px = pft::random_tensor({3, 3}, r);
  Tensor pq = pft::random_tensor({3, 4}, r);
  const Tensor gx = pft::random_tensor({3, 3}, r).detach();
  const Tensor gq = Tensor::from_data({3, 4}, {1, 0, 0, 0, 0.5, 0.5, 0.5, 0.5, 0, 0.6, 0, 0.8});
  PoseLossState state(0.4, -2.0);
  auto f = [&] { return pose_loss(px, pq, gx, gq, state).total; };
  EXPECT_LT(pft::check_gradient(f, px, r), 1e-5);
  EXPECT_LT(pft::check_gradient(f, pq, r), 1e-5);
  EXPECT_LT(pft::check_gradient(f, state.s_x, r), 1e-5);
  EXPECT_LT(pft::check_gradient(f, state.s_q, r), 1e-5);
}

TEST(SemanticCe, UniformLogitsGiveLnThree) {
  const std::vector<std::size_t> labels{0, 2, 1, 1};
  EXPECT_NEAR(semantic_ce(Tensor::zeros({3, 2, 2}), labels).item(), std::log(3.0), 1e-15);
}

TEST(SemanticCe, GrowingMarginDrivesLossToZero) {
  const std::vector<std::size_t> labels{1};
  double previous = INFINITY;
  for (double m : {1.0, 5.0, 20.0, 50.0}) {
    const double l = semantic_ce(Tensor::from_data({2, 1, 1}, {0.0, m}), labels).item();
    EXPECT_LT(l, previous);
    previous = l;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(SemanticCe, MatchesPerPixelSum) {
  std::mt19937_64 r(2);
  const Tensor logits = pft::random_tensor({3, 4, 4}, r, -3, 3);
  std::vector<std::size_t> labels(16);
  for (std::size_t i = 0; i < 16; ++i) labels[i] = (i * 7 + 1) % 3;
  double expect = 0.0;
  for (std::size_t p = 0; p < 16; ++p) {
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits[c * 16 + p]);
    expect += std::log(z) - logits[labels[p] * 16 + p];
  }
  expect /= 16.0;
  EXPECT_NEAR(semantic_ce(logits, labels).item(), expect, 1e-13);
}

TEST(SemanticCe, OutOfRangeLabelNamesThePixel) {
  std::vector<std::size_t> labels(6, 0);
  labels[4] = 3;  // (x=1, y=1) on a 3-wide map
  try {
    (void)semantic_ce(Tensor::zeros({3, 2, 3}), labels);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(x=1, y=1)"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)sam_loss(Tensor::zeros({3, 2, 3}), labels), DataError);
}

TEST(SamLoss, FixtureAngles) {
  const std::vector<std::size_t> first{0};
  // Saturated softmax: exp(-1000) underflows to 0, so p is exactly one-hot.
  EXPECT_EQ(sam_loss(Tensor::from_data({2, 1, 1}, {1000.0, 0.0}), first).item(), 0.0);
  EXPECT_EQ(sam_loss(Tensor::from_data({2, 1, 1}, {0.0, 1000.0}), first).item(), pi / 2);
  const std::vector<std::size_t> second{1};
  EXPECT_EQ(sam_loss(Tensor::zeros({2, 1, 1}), first).item(), pi / 4);
  EXPECT_EQ(sam_loss(Tensor::zeros({2, 1, 1}), second).item(), pi / 4);
}

TEST(SamLoss, StaysWithinZeroAndRightAngle) {
  std::mt19937_64 r(3);
  const Tensor logits = pft::random_tensor({5, 6, 6}, r, -40, 40);
  std::vector<std::size_t> labels(36);
  for (std::size_t i = 0; i < 36; ++i) labels[i] = i % 5;
  const Tensor rows = transpose_last2(reshape(logits, {5, 36}));
  for (std::size_t p = 0; p < 36; ++p) {
    const std::vector<std::size_t> one{labels[p]};
    const double a = sam_rows(slice(rows, 0, p, 1), one).item();
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, pi / 2);
  }
}

TEST(SemanticLoss, WeightsSelectOrMixTheTerms) {
  std::mt19937_64 r(4);
  const Tensor logits = pft::random_tensor({3, 3, 4}, r);
  std::vector<std::size_t> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = (i * 5) % 3;
  const double ce = semantic_ce(logits, labels).item();
  const double sam = sam_loss(logits, labels).item();
  EXPECT_EQ(semantic_loss(logits, labels, {1.0, 0.0}).item(), ce);
  EXPECT_EQ(semantic_loss(logits, labels, {0.0, 1.0}).item(), sam);
  EXPECT_NEAR(semantic_loss(logits, labels, {0.7, 0.3}).item(), 0.7 * ce + 0.3 * sam, 1e-15);
  const SemanticLossWeights defaults;
  EXPECT_EQ(defaults.ce + defaults.sam, 1.0);
}

TEST(SemanticLoss, GradientInLogits) {
  std::mt19937_64 r(5);
  Tensor logits = pft::random_tensor({4, 3, 3}, r);
  std::vector<std::size_t> labels(9);
  for (std::size_t i = 0; i < 9; ++i) labels[i] = (i * 3 + 2) % 4;
  EXPECT_LT(pft::check_gradient([&] { return semantic_loss(logits, labels); }, logits, r), 1e-5);
  EXPECT_LT(pft::check_gradient([&] { return sam_loss(logits, labels); }, logits, r), 1e-5);
  EXPECT_LT(pft::check_gradient([&] { return semantic_ce(logits, labels); }, logits, r), 1e-5);
}

TEST(TotalLoss, StagePresetsAndArithmetic) {
  const Tensor pose = Tensor::scalar(2.0), sem = Tensor::scalar(4.0);
  EXPECT_EQ(total_loss(pose, sem, 1.0, 0.0).item(), 2.0);
  EXPECT_EQ(total_loss(pose, sem, 0.0, 1.0).item(), 4.0);
  EXPECT_EQ(total_loss(pose, sem, 0.5, 0.5).item(), 3.0);
  EXPECT_EQ(total_loss(pose, Tensor(), 1.0, 0.0).item(), 2.0);
  EXPECT_EQ(total_loss(Tensor(), sem, 0.0, 1.0).item(), 4.0);
  EXPECT_THROW((void)total_loss(pose, sem, -0.1, 1.0), ConfigError);
  EXPECT_THROW((void)total_loss(pose, sem, 1.0, -1.0), ConfigError);
}

TEST(TotalLoss, SemanticOnlyLeavesPoseUntouched) {
  Tensor px = Tensor::parameter({1, 3}, {0.5, 0.5, 0.5});
  const Tensor q = row({1, 0, 0, 0});
  const auto pose = pose_loss(px, q, row({0, 0, 0}), q, PoseLossState()).total;
  Tensor logits = Tensor::parameter({2, 1, 1}, {0.2, 0.1});
  const std::vector<std::size_t> labels{1};
  total_loss(pose, semantic_loss(logits, labels), 0.0, 1.0).backward();
  EXPECT_TRUE(px.grad().empty() || std::all_of(px.grad().begin(), px.grad().end(), [](double g) { return g == 0.0; }));
  EXPECT_FALSE(logits.grad().empty());
}
