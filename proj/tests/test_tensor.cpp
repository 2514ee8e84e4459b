#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "poseforge/errors.hpp"
#include "poseforge/ops.hpp"
#include "test_support.hpp"

using namespace poseforge;

namespace {

std::mt19937_64 rng_for(unsigned seed) { return std::mt19937_64(seed); }

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from_data({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
}

TEST(Tensor, OnlyLeavesAreWritable) {
  Tensor a = Tensor::parameter({2}, {1, 2});
  Tensor b = add_scalar(a, 1.0);
  EXPECT_NO_THROW((void)a.mutable_data());
  EXPECT_THROW((void)b.mutable_data(), StateError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor m = Tensor::from_data({3, 2}, {1, -2, 3.5, 4, 0, 6});
  EXPECT_EQ(pft::values(matmul(eye, m)), pft::values(m));
}

TEST(Matmul, TwoByTwoTimesColumn) {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2, 1}, {0, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(pft::values(c), (std::vector<double>{2, 4}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  auto rng = rng_for(1);
  Tensor a = pft::random_tensor({5, 4}, rng);
  Tensor b = pft::random_tensor({4, 3}, rng);
  auto f = [&] { return sum(matmul(a, b)); };
  EXPECT_LT(pft::relative_error(pft::analytic_gradient(f, a), pft::numeric_gradient([&] { return f().item(); }, a)), 1e-6);
  EXPECT_LT(pft::relative_error(pft::analytic_gradient(f, b), pft::numeric_gradient([&] { return f().item(); }, b)), 1e-6);
}

TEST(Softmax, UniformRow) {
  const Tensor s = softmax_rows(Tensor::from_data({1, 3}, {0, 0, 0}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor s = softmax_rows(Tensor::from_data({1, 2}, {1000, 0}));
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneUpToMagnitudeThousand) {
  auto rng = rng_for(2);
  const Tensor a = pft::random_tensor({50, 7}, rng, -1000.0, 1000.0);
  const Tensor s = softmax_rows(a);
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(s[r * 7 + c], 0.0);
      total += s[r * 7 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, NonFiniteInputIsRejected) {
  EXPECT_THROW((void)softmax_rows(Tensor::from_data({1, 2}, {NAN, 0})), NumericError);
  EXPECT_THROW((void)softmax_rows(Tensor::from_data({1, 2}, {INFINITY, 0})), NumericError);
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  auto rng = rng_for(3);
  Tensor a = pft::random_tensor({4, 6}, rng);
  // Every Jacobian row: the gradient of one output entry.
  for (std::size_t k = 0; k < 24; ++k) {
    auto f = [&] { return slice(reshape(softmax_rows(a), {24}), 0, k, 1); };
    auto scalar = [&] { return sum(f()); };
    EXPECT_LT(pft::relative_error(pft::analytic_gradient(scalar, a),
                                  pft::numeric_gradient([&] { return scalar().item(); }, a)),
              1e-6)
        << "output entry " << k;
  }
}

TEST(Upsample, ConstantStaysConstant) {
  const Tensor up = bilinear_upsample2x(Tensor::full({2, 3, 4}, 7.0));
  EXPECT_EQ(up.shape(), (Shape{2, 6, 8}));
  for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 7.0);
}

TEST(Upsample, SinglePixel) {
  const Tensor up = bilinear_upsample2x(Tensor::from_data({1, 1, 1}, {5}));
  EXPECT_EQ(up.shape(), (Shape{1, 2, 2}));
  for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(Upsample, CheckerboardMatchesPerPixelFormula) {
  const std::vector<double> in{0, 1, 1, 0};
  const Tensor up = bilinear_upsample2x(Tensor::from_data({1, 2, 2}, in));
  // Half-pixel centers: output pixel o samples input coordinate (o + 0.5) / 2 - 0.5,
  // clamped to the edge; weights are the usual linear ones.
  auto sample = [&](double y, double x) {
    y = std::clamp(y, 0.0, 1.0);
    x = std::clamp(x, 0.0, 1.0);
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
    const double fy = y - y0, fx = x - x0;
    auto at = [&](int r, int c) { return in[static_cast<std::size_t>(r * 2 + c)]; };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  };
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox)
      EXPECT_NEAR(up[static_cast<std::size_t>(oy * 4 + ox)], sample((oy + 0.5) / 2 - 0.5, (ox + 0.5) / 2 - 0.5), 1e-15)
          << oy << "," << ox;
}

TEST(Elementwise, SoftplusAtZeroIsLnTwo) {
  EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(0.0)).item(), std::numbers::ln2);
}

TEST(Elementwise, ArccosClampAtOne) {
  const double v = arccos_clamped(Tensor::scalar(1.0)).item();
  EXPECT_DOUBLE_EQ(v, std::acos(1.0 - 1e-7));
  EXPECT_NEAR(v, 4.47e-4, 1e-6);
}

TEST(Elementwise, ArccosClampKeepsGradientFinite) {
  Tensor x = Tensor::parameter({2}, {1.0, -1.0});
  sum(arccos_clamped(x)).backward();
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Elementwise, ArccosExactValueWithClampedSlope) {
  Tensor x = Tensor::parameter({4}, {1.0, -1.0, 0.0, 1.5});
  const Tensor y = arccos_grad_clamped(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], std::numbers::pi);
  EXPECT_EQ(y[2], std::numbers::pi / 2);
  EXPECT_EQ(y[3], 0.0);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], -1.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(Batchnorm, EvalWithoutStatisticsIsAStateError) {
  auto stats = BatchNormStats::identity(2);
  const Tensor gamma = Tensor::full({2}, 1.0), beta = Tensor::zeros({2});
  EXPECT_THROW((void)batchnorm(Tensor::zeros({1, 2, 2, 2}), gamma, beta, stats, Mode::eval), StateError);
  (void)batchnorm(Tensor::from_data({1, 2, 1, 2}, {1, 2, 3, 5}), gamma, beta, stats, Mode::train);
  EXPECT_NO_THROW((void)batchnorm(Tensor::zeros({1, 2, 2, 2}), gamma, beta, stats, Mode::eval));
}

TEST(Batchnorm, TrainModeNormalizesPerChannel) {
  auto stats = BatchNormStats::identity(1);
  const Tensor y = batchnorm(Tensor::from_data({2, 1, 1, 2}, {1, 2, 3, 4}), Tensor::full({1}, 1.0),
                             Tensor::zeros({1}), stats, Mode::train);
  // mean 2.5, biased variance 1.25
  const double sd = std::sqrt(1.25 + 1e-5);
  EXPECT_NEAR(y[0], -1.5 / sd, 1e-14);
  EXPECT_NEAR(y[3], 1.5 / sd, 1e-14);
}

// Every differentiable op against central differences at random inputs in
// [-2, 2], with each op's domain restrictions mapped into that range.
struct OpCase {
  const char* name;
  Shape shape;
  std::function<Tensor(const Tensor&)> f;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  static Tensor w1x1 = Tensor::from_data({3, 2, 1, 1}, {0.3, -0.5, 1.1, 0.2, -0.7, 0.4});
  static Tensor b3 = Tensor::from_data({3}, {0.1, -0.2, 0.3});
  static std::vector<double> w33v = [] {
    std::mt19937_64 r(99);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(3 * 2 * 9);
    for (auto& x : v) x = u(r);
    return v;
  }();
  static Tensor w3x3 = Tensor::from_data({3, 2, 3, 3}, w33v);
  static Tensor other = Tensor::from_data({2, 3}, {0.5, -1.5, 1.25, 0.75, 2.0, -0.25});
  static Tensor gamma = Tensor::from_data({2}, {1.3, 0.7});
  static Tensor beta = Tensor::from_data({2}, {0.1, -0.4});
  auto positive = [](const Tensor& x) { return add_scalar(square(x), 0.1); };
  return {
      {"add", {2, 3}, [](const Tensor& x) { return add(x, other); }},
      {"add_broadcast", {4, 2, 3}, [](const Tensor& x) { return add(x, other); }},
      {"sub", {2, 3}, [](const Tensor& x) { return sub(other, x); }},
      {"mul", {2, 3}, [](const Tensor& x) { return mul(x, other); }},
      {"mul_self", {2, 3}, [](const Tensor& x) { return mul(x, x); }},
      {"div", {2, 3}, [=](const Tensor& x) { return div(other, positive(x)); }},
      {"exp", {2, 3}, [](const Tensor& x) { return exp(x); }},
      {"log", {2, 3}, [=](const Tensor& x) { return log(positive(x)); }},
      {"sqrt", {2, 3}, [=](const Tensor& x) { return sqrt(positive(x)); }},
      {"sin", {2, 3}, [](const Tensor& x) { return sin(x); }},
      {"cos", {2, 3}, [](const Tensor& x) { return cos(x); }},
      {"relu", {2, 3}, [](const Tensor& x) { return relu(x); }},
      {"relu6", {2, 3}, [](const Tensor& x) { return relu6(mul_scalar(x, 4.0)); }},
      {"softplus", {2, 3}, [](const Tensor& x) { return softplus(x); }},
      {"sigmoid", {2, 3}, [](const Tensor& x) { return sigmoid(x); }},
      {"arccos_clamped", {2, 3}, [](const Tensor& x) { return arccos_clamped(mul_scalar(x, 0.45)); }},
      {"arccos_grad_clamped", {2, 3}, [](const Tensor& x) { return arccos_grad_clamped(mul_scalar(x, 0.45)); }},
      {"norm_l2", {3, 4}, [](const Tensor& x) { return norm_l2(x); }},
      {"sum", {3, 4}, [](const Tensor& x) { return sum(x); }},
      {"mean", {3, 4}, [](const Tensor& x) { return mean(x); }},
      {"sum_axis", {3, 4, 2}, [](const Tensor& x) { return sum_axis(x, 1); }},
      {"mean_axis", {3, 4, 2}, [](const Tensor& x) { return mean_axis(x, 0); }},
      {"reshape", {3, 4}, [](const Tensor& x) { return mul(reshape(x, {2, 6}), reshape(x, {2, 6})); }},
      {"transpose", {2, 3, 4}, [](const Tensor& x) { return square(transpose_last2(x)); }},
      {"concat", {2, 3}, [](const Tensor& x) { return concat({x, square(x), other}, 0); }},
      {"slice", {4, 3}, [](const Tensor& x) { return square(slice(x, 0, 1, 2)); }},
      {"matmul_batched", {2, 3, 2}, [](const Tensor& x) { return matmul(x, other); }},
      {"linear", {4, 3}, [](const Tensor& x) { return linear(x, other, Tensor::from_data({2}, {0.2, -0.1})); }},
      {"softmax_rows", {3, 5}, [](const Tensor& x) { return softmax_rows(x); }},
      {"log_softmax_rows", {3, 5}, [](const Tensor& x) { return log_softmax_rows(x); }},
      {"gather_last", {3, 4}, [](const Tensor& x) {
         static const std::vector<std::size_t> idx{2, 0, 3};
         return gather_last(x, idx);
       }},
      {"conv1x1", {2, 2, 3, 3}, [](const Tensor& x) { return conv1x1(x, w1x1, b3); }},
      {"conv3x3_s1", {1, 2, 5, 4}, [](const Tensor& x) { return conv3x3(x, w3x3, b3, 1); }},
      {"conv3x3_s2", {2, 2, 6, 5}, [](const Tensor& x) { return conv3x3(x, w3x3, b3, 2); }},
      {"batchnorm_train", {3, 2, 2, 3}, [](const Tensor& x) {
         auto stats = BatchNormStats::identity(2);
         return batchnorm(x, gamma, beta, stats, Mode::train);
       }},
      {"batchnorm_eval", {2, 2, 2, 2}, [](const Tensor& x) {
         auto stats = BatchNormStats::identity(2);
         stats.running_mean.mutable_data()[0] = 0.3;
         stats.running_var.mutable_data()[1] = 2.5;
         stats.batches_tracked.mutable_data()[0] = 1;
         return batchnorm(x, gamma, beta, stats, Mode::eval);
       }},
      {"layer_norm", {3, 2}, [](const Tensor& x) { return layer_norm(x, gamma, beta); }},
      {"bilinear_upsample2x", {2, 3, 2}, [](const Tensor& x) { return bilinear_upsample2x(x); }},
      {"bilinear_resize", {1, 3, 5}, [](const Tensor& x) { return bilinear_resize(x, 4, 2); }},
  };
}

TEST_P(OpGradient, MatchesCentralDifferencesAtTenPoints) {
  const auto cases = op_cases();
  const auto& c = cases[static_cast<std::size_t>(GetParam())];
  for (unsigned point = 0; point < 10; ++point) {
    std::mt19937_64 rng(1000 + point);
    Tensor x = pft::random_tensor(c.shape, rng);
    EXPECT_LT(pft::check_gradient([&] { return c.f(x); }, x, rng), 1e-5) << c.name << " point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Tape, FanOutAccumulatesAndEachNodeRunsOnce) {
  Tensor x = Tensor::parameter({1}, {3.0});
  const Tensor y = mul(x, x);           // 2x
  const Tensor z = add(y, mul_scalar(x, 5.0));  // + 5
  const Tensor w = add(z, y);           // + 2x again
  w.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0 * 3.0 + 5.0);
  const Tape tape = Tape::record(w);
  EXPECT_TRUE(tape.is_topological());
  std::vector<const detail::Node*> seen(tape.order().begin(), tape.order().end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
}

TEST(Tape, DiamondGraphOrdersInputsFirst) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor a = exp(x), b = sin(x);
  const Tensor root = sum(mul(add(a, b), sub(a, b)));
  const Tape tape = Tape::record(root);
  ASSERT_TRUE(tape.is_topological());
  EXPECT_EQ(tape.order().back(), root.node().get());
  root.backward();
  for (std::size_t i = 0; i < 2; ++i) {
    // d/dx (e^2x - sin^2 x) = 2e^2x - sin 2x
    const double xv = x[i];
    EXPECT_NEAR(x.grad()[i], 2 * std::exp(2 * xv) - std::sin(2 * xv), 1e-12);
  }
}

TEST(Tape, GradientsExistForEveryTrainableLeafWithMatchingShape) {
  Tensor a = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::parameter({3}, {1, 1, 1});
  Tensor unused = Tensor::parameter({4}, {0, 0, 0, 0});
  sum(add(a, b)).backward();
  EXPECT_EQ(a.grad().size(), a.numel());
  EXPECT_EQ(b.grad().size(), b.numel());
  for (double g : b.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
  EXPECT_TRUE(unused.grad().empty());
}

TEST(Tape, NoGradGuardDropsTheGraph) {
  Tensor x = Tensor::parameter({1}, {1.0});
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_mode_enabled());
    EXPECT_FALSE(exp(x).requires_grad());
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_TRUE(exp(x).requires_grad());
}
