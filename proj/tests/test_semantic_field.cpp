#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "poseforge/errors.hpp"
#include "poseforge/semantic_field.hpp"
#include "test_support.hpp"

using namespace poseforge;

namespace {

// Density and logits that are functions of z only, constant on [edges[k], edges[k+1]).
class LayeredField final : public SceneField {
 public:
  LayeredField(std::vector<double> edges, std::vector<double> sigma, std::vector<std::vector<double>> logits)
      : edges_(std::move(edges)), sigma_(std::move(sigma)), logits_(std::move(logits)) {}

  FieldOutput evaluate(const Tensor& points) const override {
    const std::size_t P = points.dim(0), C = num_classes();
    std::vector<double> s(P), l(P * C), rgb(P * 3, 0.5);
    for (std::size_t p = 0; p < P; ++p) {
      const double z = points[p * 3 + 2];
      std::size_t k = 0;
      while (k + 1 < sigma_.size() && z >= edges_[k + 1]) ++k;
      s[p] = sigma_[k];
      for (std::size_t c = 0; c < C; ++c) l[p * C + c] = logits_[k][c];
    }
    return {Tensor::from_data({P}, s), Tensor::from_data({P, C}, l), Tensor::from_data({P, 3}, rgb)};
  }
  std::size_t num_classes() const override { return logits_.front().size(); }

 private:
  std::vector<double> edges_, sigma_;
  std::vector<std::vector<double>> logits_;
};

// Opaque axis-aligned box of class 1 in empty space.
class BoxField final : public SceneField {
 public:
  FieldOutput evaluate(const Tensor& points) const override {
    const std::size_t P = points.dim(0);
    std::vector<double> s(P), l(P * 2, 0.0), rgb(P * 3, 0.5);
    for (std::size_t p = 0; p < P; ++p) {
      bool inside = true;
      for (std::size_t a = 0; a < 3; ++a) inside = inside && std::abs(points[p * 3 + a]) <= 0.5;
      s[p] = inside ? 500.0 : 0.0;
      l[p * 2 + 1] = inside ? 10.0 : 0.0;
    }
    return {Tensor::from_data({P}, s), Tensor::from_data({P, 2}, l), Tensor::from_data({P, 3}, rgb)};
  }
  std::size_t num_classes() const override { return 2; }
};

// Slab test against the box [-0.5, 0.5]^3.
bool hits_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double near, double far) {
  double t0 = near, t1 = far;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::abs(o[a]) > 0.5) return false;
      continue;
    }
    double ta = (-0.5 - o[a]) / d[a], tb = (0.5 - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

SemanticField jittered_field(std::uint64_t seed, std::size_t classes = 3) {
  Rng rng(seed);
  SemanticField field(SemanticFieldConfig{classes, 3, 16, 2}, rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& p : field.parameters())
    if (p.name.find("bias") != std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = u(rng);
  return field;
}

Intrinsics toy_intrinsics() { return Intrinsics{80.0, 80.0, 48.0, 32.0, 96, 64}; }

}  // namespace

TEST(SemanticField, ZeroHeadsGiveLnTwoDensityAndZeroLogits) {
  Rng rng(1);
  SemanticField field(SemanticFieldConfig{}, rng);
  field.zero_heads();
  std::mt19937_64 r(2);
  const auto out = field.evaluate(pft::random_tensor({5, 3}, r));
  for (double s : out.sigma.data()) EXPECT_DOUBLE_EQ(s, std::numbers::ln2);
  for (double l : out.logits.data()) EXPECT_EQ(l, 0.0);
  for (double c : out.rgb.data()) EXPECT_DOUBLE_EQ(c, 0.5);
}

TEST(SemanticField, SamePointSameOutput) {
  const auto field = jittered_field(3);
  const Tensor x = Tensor::from_data({2, 3}, {0.1, -0.4, 0.3, 0.1, -0.4, 0.3});
  const auto out = field.evaluate(x);
  EXPECT_EQ(out.sigma[0], out.sigma[1]);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.logits[c], out.logits[3 + c]);
  EXPECT_EQ(pft::values(field.evaluate(x).logits), pft::values(out.logits));
}

TEST(SemanticField, DensityGradientInPosition) {
  const auto field = jittered_field(4);
  std::mt19937_64 r(5);
  Tensor x = pft::random_tensor({6, 3}, r, -1, 1);
  EXPECT_LT(pft::check_gradient([&] { return field.evaluate(x).sigma; }, x, r), 1e-5);
}

TEST(SemanticField, FrequencyEncodingLayout) {
  const Tensor x = Tensor::from_data({1, 3}, {0.25, -0.5, 0.125});
  const Tensor e = frequency_encode(x, 2);
  ASSERT_EQ(e.shape(), (Shape{1, 15}));
  const double pi = std::numbers::pi;
  std::vector<double> expect;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t a = 0; a < 3; ++a) expect.push_back(std::sin(std::ldexp(pi, static_cast<int>(k)) * x[a]));
    for (std::size_t a = 0; a < 3; ++a) expect.push_back(std::cos(std::ldexp(pi, static_cast<int>(k)) * x[a]));
  }
  for (std::size_t a = 0; a < 3; ++a) expect.push_back(x[a]);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(e[i], expect[i], 1e-15) << i;
}

TEST(VolumeRender, EmptySpace) {
  const Tensor sigma = Tensor::zeros({1, 8});
  std::mt19937_64 r(6);
  const Tensor values = pft::random_tensor({1, 8, 3}, r);
  const std::vector<double> delta(8, 0.25);
  const auto out = volume_render(sigma, values, delta);
  for (double w : out.weights) EXPECT_EQ(w, 0.0);
  for (double v : out.integrated.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.transmittance_end[0], 1.0);
}

TEST(VolumeRender, OpaqueSingleSampleReturnsItsValue) {
  const Tensor values = Tensor::from_data({1, 1, 3}, {0.3, -1.2, 2.0});
  const std::vector<double> delta{1.0};
  const auto out = volume_render(Tensor::from_data({1, 1}, {1e4}), values, delta);
  EXPECT_DOUBLE_EQ(out.weights[0], 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.integrated[c], values[c]);
}

TEST(VolumeRender, WeightsAndResidualTransmittanceSumToOne) {
  std::mt19937_64 r(7);
  const std::size_t R = 1000, S = 24;
  const Tensor sigma = pft::random_tensor({R, S}, r, 0.0, 5.0);
  const Tensor values = Tensor::zeros({R, S, 1});
  std::vector<double> delta(R * S);
  std::uniform_real_distribution<double> u(0.01, 0.5);
  for (auto& d : delta) d = u(r);
  const auto out = volume_render(sigma, values, delta);
  for (std::size_t ray = 0; ray < R; ++ray) {
    double total = out.transmittance_end[ray];
    for (std::size_t s = 0; s < S; ++s) {
      EXPECT_GE(out.weights[ray * S + s], 0.0);
      total += out.weights[ray * S + s];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(VolumeRender, PiecewiseConstantMatchesClosedForm) {
  // Three layers along +z from near = 1 to far = 4, boundaries on bin edges
  // (12 bins of 0.25).
  const std::vector<double> edges{1.0, 1.75, 3.0};
  const std::vector<double> sigma{0.4, 2.5, 0.9};
  const std::vector<std::vector<double>> logits{{1.0, -2.0}, {0.5, 3.0}, {-1.5, 0.25}};
  const LayeredField field(edges, sigma, logits);
  RayBatch rays{Tensor::zeros({1, 3}), Tensor::from_data({1, 3}, {0, 0, 1}), 1.0, 4.0, 12};
  const auto out = render_rays(field, rays, Mode::eval);
  // Closed form: S = sum_k s_k exp(-sum_{j<k} sigma_j L_j) (1 - exp(-sigma_k L_k)).
  const std::vector<double> lengths{0.75, 1.25, 1.0};
  double optical = 0.0;
  std::vector<double> expect(2, 0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    const double w = std::exp(-optical) * (1.0 - std::exp(-sigma[k] * lengths[k]));
    for (std::size_t c = 0; c < 2; ++c) expect[c] += w * logits[k][c];
    optical += sigma[k] * lengths[k];
  }
  EXPECT_NEAR(out.logits[0], expect[0], 1e-9);
  EXPECT_NEAR(out.logits[1], expect[1], 1e-9);
  EXPECT_NEAR(out.transmittance_end[0], std::exp(-optical), 1e-12);
}

TEST(VolumeRender, ZeroSamplesIsAConfigError) {
  RayBatch rays{Tensor::zeros({1, 3}), Tensor::from_data({1, 3}, {0, 0, 1}), 1.0, 4.0, 0};
  const auto field = jittered_field(8);
  EXPECT_THROW((void)render_rays(field, rays, Mode::eval), ConfigError);
}

TEST(VolumeRender, GradientsInDensityAndValues) {
  std::mt19937_64 r(9);
  Tensor sigma = pft::random_tensor({3, 5}, r, 0.0, 2.0);
  Tensor values = pft::random_tensor({3, 5, 2}, r);
  std::vector<double> delta(15);
  std::uniform_real_distribution<double> u(0.1, 0.4);
  for (auto& d : delta) d = u(r);
  auto f = [&] { return volume_render(sigma, values, delta).integrated; };
  EXPECT_LT(pft::check_gradient(f, sigma, r), 1e-4);
  EXPECT_LT(pft::check_gradient(f, values, r), 1e-4);
}

TEST(RenderRays, GradientInRayOrigin) {
  const auto field = jittered_field(10);
  std::mt19937_64 r(11);
  Tensor origins = pft::random_tensor({4, 3}, r, -0.3, 0.3);
  const Tensor dirs = Tensor::from_data({4, 3}, {0, 0, 1, 0.6, 0, 0.8, 0, -0.6, 0.8, 0.48, 0.6, 0.64});
  auto f = [&] {
    RayBatch rays{origins, dirs, 0.2, 2.0, 8};
    return render_rays(field, rays, Mode::eval).logits;
  };
  EXPECT_LT(pft::check_gradient(f, origins, r), 1e-4);
}

TEST(Rays, IdentityPoseCenterPixelLooksDownTheAxis) {
  const Intrinsics k{50.0, 50.0, 2.0, 1.0, 5, 3};
  const auto rays = generate_rays(Camera{k, Pose{}}, 0.1, 5.0, 4);
  // Pixel (u, v) = (2, 1) is row 1, column 2.
  const std::size_t idx = 1 * 5 + 2;
  EXPECT_EQ(rays.directions[idx * 3 + 0], 0.0);
  EXPECT_EQ(rays.directions[idx * 3 + 1], 0.0);
  EXPECT_EQ(rays.directions[idx * 3 + 2], 1.0);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const double n = std::hypot(rays.directions[i * 3], rays.directions[i * 3 + 1], rays.directions[i * 3 + 2]);
    EXPECT_NEAR(n, 1.0, 1e-9);
  }
}

TEST(Rays, OriginsEqualTheTranslation) {
  Pose pose;
  pose.translation = {1.5, -2.0, 0.25};
  pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 2, 3).normalized()));
  const auto rays = generate_rays(Camera{toy_intrinsics(), pose}, 0.1, 5.0, 4, 8);
  for (std::size_t i = 0; i < rays.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(rays.origins[i * 3 + a], pose.translation[static_cast<int>(a)]);
}

TEST(Rays, QuarterTurnAboutVerticalAxisMatchesMatrix) {
  // 90 degrees about the camera y axis, as a quaternion (cos 45, 0, sin 45, 0).
  Pose pose;
  const double h = std::sqrt(0.5);
  pose.rotation = Eigen::Quaterniond(h, 0.0, h, 0.0);
  const Intrinsics k{50.0, 50.0, 2.0, 2.0, 5, 5};
  const auto rays = generate_rays(Camera{k, pose}, 0.1, 5.0, 4);
  // Rotation matrix about y by +90 degrees: [[0,0,1],[0,1,0],[-1,0,0]].
  const double m[3][3] = {{0, 0, 1}, {0, 1, 0}, {-1, 0, 0}};
  const Tensor local = camera_directions(k, 1);
  for (std::size_t i = 0; i < rays.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      double expect = 0.0;
      for (std::size_t b = 0; b < 3; ++b) expect += m[a][b] * local[i * 3 + b];
      EXPECT_NEAR(rays.directions[i * 3 + a], expect, 1e-15);
    }
  const std::size_t centre = 2 * 5 + 2;
  EXPECT_NEAR(rays.directions[centre * 3 + 0], 1.0, 1e-15);
}

TEST(Rays, DifferentiablePoseRaysAgreeWithCameraRays) {
  Pose pose;
  pose.translation = {0.3, 0.1, -2.0};
  pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(1.1, Eigen::Vector3d(0.2, -1, 0.4).normalized()));
  const auto a = generate_rays(Camera{toy_intrinsics(), pose}, 0.1, 5.0, 4, 8);
  const auto b = rays_from_pose(toy_intrinsics(), 8, Tensor::from_data({3}, {0.3, 0.1, -2.0}),
                                quaternion_tensor(pose.rotation), 0.1, 5.0, 4);
  for (std::size_t i = 0; i < a.directions.numel(); ++i) EXPECT_NEAR(a.directions[i], b.directions[i], 1e-14);
  EXPECT_EQ(pft::values(a.origins), pft::values(b.origins));
}

TEST(Rays, InvalidIntrinsicsAreRejected) {
  EXPECT_THROW(Intrinsics({0.0, 1.0, 1.0, 1.0, 4, 4}).validate(), ConfigError);
  EXPECT_THROW(Intrinsics({1.0, 1.0, 4.0, 1.0, 4, 4}).validate(), ConfigError);
  EXPECT_NO_THROW(Intrinsics({1.0, 1.0, 3.5, 0.0, 4, 4}).validate());
}

TEST(StratifiedSamples, MidpointsInEvalJitterInsideBinsInTrain) {
  const auto e = stratified_samples(2, 1.0, 3.0, 4, Mode::eval, nullptr);
  const std::vector<double> mids{1.25, 1.75, 2.25, 2.75};
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_DOUBLE_EQ(e.t[s], mids[s]);
    EXPECT_DOUBLE_EQ(e.t[4 + s], mids[s]);
    EXPECT_DOUBLE_EQ(e.delta[s], 0.5);
  }
  Rng rng(12);
  const auto t = stratified_samples(50, 1.0, 3.0, 4, Mode::train, &rng);
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t s = 0; s < 4; ++s) {
      const double v = t.t[r * 4 + s];
      EXPECT_GE(v, 1.0 + 0.5 * static_cast<double>(s));
      EXPECT_LE(v, 1.0 + 0.5 * static_cast<double>(s + 1));
    }
}

TEST(RenderImage, StrideShapesTheMaps) {
  const auto field = jittered_field(13);
  const auto img = render_image(Camera{toy_intrinsics(), Pose{}}, field, 4, 0.1, 3.0, 4);
  EXPECT_EQ(img.logits.shape(), (Shape{3, 16, 24}));
  EXPECT_EQ(img.rgb.shape(), (Shape{3, 16, 24}));
}

TEST(RenderImage, EmptyFieldGivesZeroLogits) {
  const LayeredField empty({0.0}, {0.0}, {{3.0, 1.0, -2.0}});
  const auto img = render_image(Camera{toy_intrinsics(), Pose{}}, empty, 8, 0.1, 3.0, 8);
  for (double v : img.logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(RenderImage, OpaqueBoxSilhouetteMatchesRayBoxOracle) {
  const BoxField box;
  Pose pose;
  pose.translation = {0.4, -0.3, -3.0};
  pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.15, Eigen::Vector3d(1, 1, 0).normalized()));
  const Intrinsics k{70.0, 70.0, 48.0, 32.0, 96, 64};
  const double near = 0.5, far = 6.0;
  const auto img = render_image(Camera{k, pose}, box, 1, near, far, 256);
  const auto labels = img.labels();
  const auto rays = generate_rays(Camera{k, pose}, near, far, 1);
  std::size_t agree = 0, inside = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Eigen::Vector3d o(rays.origins[i * 3], rays.origins[i * 3 + 1], rays.origins[i * 3 + 2]);
    const Eigen::Vector3d d(rays.directions[i * 3], rays.directions[i * 3 + 1], rays.directions[i * 3 + 2]);
    const bool hit = hits_box(o, d, near, far);
    inside += hit;
    agree += (labels[i] == 1) == hit;
  }
  EXPECT_GT(inside, labels.size() / 20);  // the box is actually in view
  EXPECT_GE(static_cast<double>(agree), 0.95 * static_cast<double>(labels.size()));
}

TEST(RenderImage, QuarterRollRotatesThePixels) {
  const auto field = jittered_field(14);
  // Square image with the principal point on the centre pixel.
  const Intrinsics k{20.0, 20.0, 7.0, 7.0, 15, 15};
  Pose pose;
  pose.translation = {0.1, -0.2, -1.5};
  const auto a = render_image(Camera{k, pose}, field, 1, 0.2, 3.0, 16);
  Pose rolled = pose;
  const double h = std::sqrt(0.5);
  rolled.rotation = pose.rotation * Eigen::Quaterniond(h, 0.0, 0.0, h);  // +90 degrees about the optical axis
  const auto b = render_image(Camera{k, rolled}, field, 1, 0.2, 3.0, 16);
  // Rz(90) maps camera direction (a, b) to (-b, a): rolled pixel (u, v) sees
  // what the original pixel (14 - v, u) saw.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t v = 0; v < 15; ++v)
      for (std::size_t u = 0; u < 15; ++u) {
        const std::size_t uo = 14 - v, vo = u;
        EXPECT_NEAR(b.logits[(c * 15 + v) * 15 + u], a.logits[(c * 15 + vo) * 15 + uo], 1e-9);
      }
}

TEST(RenderImage, ThreadCountDoesNotChangeTheResult) {
  const auto field = jittered_field(15);
  Pose pose;
  pose.translation = {0.0, 0.0, -1.5};
  setenv("POSEFORGE_THREADS", "1", 1);
  const auto one = render_image(Camera{toy_intrinsics(), pose}, field, 4, 0.2, 3.0, 8);
  setenv("POSEFORGE_THREADS", "3", 1);
  const auto three = render_image(Camera{toy_intrinsics(), pose}, field, 4, 0.2, 3.0, 8);
  unsetenv("POSEFORGE_THREADS");
  EXPECT_EQ(pft::values(one.logits), pft::values(three.logits));
}
