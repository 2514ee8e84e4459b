#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "poseforge/data_io.hpp"
#include "poseforge/errors.hpp"

using namespace poseforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("poseforge_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

// Opaque box of class 1 over [-0.5, 0.5]^3, as a continuous field.
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

}  // namespace

TEST(PoseFile, IdentityLine) {
  const auto poses = parse_pose_text("0 0 0 0 0 0 1\n");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].translation, Eigen::Vector3d::Zero());
  EXPECT_EQ(poses[0].rotation.w(), 1.0);
  EXPECT_EQ(poses[0].rotation.vec(), Eigen::Vector3d::Zero());
}

TEST(PoseFile, NegativeScalarIsCanonicalized) {
  const auto poses = parse_pose_text("1 2 3 0 0 0 -1");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].translation, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(poses[0].rotation.w(), 1.0);
}

TEST(PoseFile, ScalarLastOnDiskScalarFirstInMemory) {
  const auto p = parse_pose_text("0 0 0 0.6 0 0.8 0")[0];
  EXPECT_DOUBLE_EQ(p.rotation.w(), 0.0);
  EXPECT_DOUBLE_EQ(p.rotation.x(), 0.6);
  EXPECT_DOUBLE_EQ(p.rotation.z(), 0.8);
}

TEST(PoseFile, NormalizesOnIngestion) {
  const auto p = parse_pose_text("0 0 0 0 0 3 4")[0];
  EXPECT_NEAR(p.rotation.norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(p.rotation.w(), 0.8);
  EXPECT_DOUBLE_EQ(p.rotation.z(), 0.6);
}

TEST(PoseFile, RoundTripOfRandomPoses) {
  std::mt19937_64 r(11);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<Pose> poses(100);
  for (auto& p : poses) {
    p.translation = {n(r), n(r), n(r)};
    p.rotation = canonicalize(Eigen::Quaterniond(n(r), n(r), n(r), n(r)).normalized());
  }
  const fs::path dir = scratch("roundtrip");
  write_pose_file(dir / "poses.txt", poses);
  const auto back = parse_pose_file(dir / "poses.txt");
  ASSERT_EQ(back.size(), poses.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    worst = std::max(worst, (back[i].translation - poses[i].translation).cwiseAbs().maxCoeff());
    worst = std::max(worst, (back[i].rotation.coeffs() - poses[i].rotation.coeffs()).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-12);
  // write(parse(f)) is a fixed point of write-then-parse.
  write_pose_file(dir / "once.txt", back);
  write_pose_file(dir / "twice.txt", parse_pose_file(dir / "once.txt"));
  std::ifstream a(dir / "once.txt"), b(dir / "twice.txt");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(PoseFile, ErrorsNameTheLine) {
  const auto count = error_of([] { (void)parse_pose_text("0 0 0 0 0 0 1\n\n1 2 3\n", "poses.txt"); });
  EXPECT_NE(count.find("poses.txt:3"), std::string::npos) << count;
  const auto word = error_of([] { (void)parse_pose_text("0 0 zero 0 0 0 1", "p"); });
  EXPECT_NE(word.find("p:1"), std::string::npos) << word;
  EXPECT_NE(word.find("zero"), std::string::npos) << word;
  const auto tiny = error_of([] { (void)parse_pose_text("0 0 0 1 0 0 0\n0 0 0 1e-7 0 0 0", "p"); });
  EXPECT_NE(tiny.find("p:2"), std::string::npos) << tiny;
}

TEST(Netpbm, BinaryAndPlainRoundTrip) {
  const fs::path dir = scratch("netpbm");
  Raster rgb{3, 2, 3, {0, 1, 2, 50, 60, 70, 255, 254, 253, 9, 8, 7, 100, 101, 102, 3, 30, 200}};
  Raster gray{3, 2, 1, {0, 1, 2, 3, 4, 255}};
  for (bool binary : {true, false}) {
    write_netpbm(dir / "a.ppm", rgb, binary);
    write_netpbm(dir / "a.pgm", gray, binary);
    const auto r = read_netpbm(dir / "a.ppm");
    const auto g = read_netpbm(dir / "a.pgm");
    EXPECT_EQ(r.pixels, rgb.pixels);
    EXPECT_EQ(r.channels, 3u);
    EXPECT_EQ(g.pixels, gray.pixels);
    EXPECT_EQ(g.width, 3u);
    EXPECT_EQ(g.height, 2u);
  }
}

TEST(VoxelMarch, HitsTheFirstOccupiedCell) {
  VoxelGrid g;
  g.cells.assign(16 * 16 * 16, 0);
  g.fill({4, 4, 4}, {12, 12, 12}, 2);
  const auto hit = march(g, {0.0, 0.0, -3.0}, {0.0, 0.0, 1.0}, 0.1, 10.0);
  EXPECT_EQ(hit.label, 2);
  EXPECT_NEAR(hit.t, 2.5, 1e-12);
  EXPECT_EQ(hit.axis, 2);
  const auto miss = march(g, {0.0, 0.0, -3.0}, {1.0, 0.0, 0.0}, 0.1, 10.0);
  EXPECT_EQ(miss.label, 0);
  const auto short_far = march(g, {0.0, 0.0, -3.0}, {0.0, 0.0, 1.0}, 0.1, 2.0);
  EXPECT_EQ(short_far.label, 0);
}

TEST(VoxelMarch, AgreesWithTheContinuousBoxRender) {
  VoxelGrid g;
  g.cells.assign(16 * 16 * 16, 0);
  g.fill({4, 4, 4}, {12, 12, 12}, 1);  // exactly [-0.5, 0.5]^3
  Pose pose;
  pose.translation = {0.4, -0.3, -3.0};
  pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.15, Eigen::Vector3d(1, 1, 0).normalized()));
  const Camera cam{Intrinsics{70.0, 70.0, 48.0, 32.0, 96, 64}, pose};
  const auto voxels = render_voxels(g, {{0, 0, 0}, {1, 1, 1}}, cam, 0.5, 6.0);
  const auto field = render_image(cam, BoxField{}, 1, 0.5, 6.0, 256).labels();
  ASSERT_EQ(voxels.labels.size(), field.size());
  std::size_t agree = 0, box = 0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    agree += voxels.labels[i] == field[i];
    box += voxels.labels[i] == 1;
  }
  EXPECT_GT(box, field.size() / 20);
  EXPECT_GE(static_cast<double>(agree), 0.97 * static_cast<double>(field.size()));
}

TEST(SyntheticScene, SameSeedSameScene) {
  const SceneSpec spec{5, 3, 4, 64, 32};
  const auto a = generate_scene(spec);
  const auto b = generate_scene(spec);
  EXPECT_EQ(a.grid.cells, b.grid.cells);
  ASSERT_EQ(a.samples.size(), 4u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].labels, b.samples[i].labels);
    EXPECT_EQ(std::vector<double>(a.samples[i].image.data().begin(), a.samples[i].image.data().end()),
              std::vector<double>(b.samples[i].image.data().begin(), b.samples[i].image.data().end()));
    EXPECT_EQ(a.samples[i].pose.translation, b.samples[i].pose.translation);
  }
  const auto c = generate_scene(SceneSpec{6, 3, 4, 64, 32});
  EXPECT_NE(a.grid.cells, c.grid.cells);
}

TEST(SyntheticScene, TwoClassesEveryViewShowsBoth) {
  const auto scene = generate_scene(SceneSpec{3, 2, 8, 96, 64});
  for (const auto& s : scene.samples) {
    const auto ones = std::count(s.labels.begin(), s.labels.end(), 1u);
    EXPECT_GT(ones, 0);
    EXPECT_LT(static_cast<std::size_t>(ones), s.labels.size());
  }
}

TEST(SyntheticScene, LabelsInRangeAndViewsMostlyGeometry) {
  const auto scene = generate_scene(SceneSpec{1, 4, 20, 96, 64});
  ASSERT_EQ(scene.samples.size(), 20u);
  for (const auto& s : scene.samples) {
    std::size_t hits = 0;
    for (auto l : s.labels) {
      EXPECT_LT(l, 4u);
      hits += l != 0;
    }
    EXPECT_GE(2 * hits, s.labels.size());
    EXPECT_NEAR(s.pose.rotation.norm(), 1.0, 1e-12);
  }
}

TEST(SyntheticScene, RejectsBadSpecs) {
  EXPECT_THROW((void)generate_scene(SceneSpec{1, 1, 4, 64, 32}), ConfigError);
  EXPECT_THROW((void)generate_scene(SceneSpec{1, 3, 4, 64, 40}), ConfigError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  const auto scene = generate_scene(SceneSpec{2, 3, 5, 64, 32});
  const fs::path dir = scratch("dataset");
  write_dataset(dir, scene);
  const auto ds = load_dataset(dir);
  ASSERT_EQ(ds.samples.size(), 5u);
  EXPECT_EQ(ds.manifest.classes, 3u);
  EXPECT_EQ(ds.intrinsics.width, 64u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(ds.samples[i].labels, scene.samples[i].labels);
    // 8-bit quantization of the images.
    for (std::size_t k = 0; k < ds.samples[i].image.numel(); ++k)
      ASSERT_NEAR(ds.samples[i].image[k], scene.samples[i].image[k], 0.5 / 255.0 + 1e-12);
    EXPECT_LT((ds.samples[i].pose.translation - scene.samples[i].pose.translation).norm(), 1e-12);
  }
}

TEST(Dataset, PadsToMultiplesOfThirtyTwo) {
  const fs::path dir = scratch("padding");
  SceneManifest m;
  m.classes = 2;
  m.views = 1;
  m.intrinsics = Intrinsics{30.0, 30.0, 20.0, 15.0, 40, 30};
  write_manifest(dir / "manifest.txt", m);
  Raster img{40, 30, 3, std::vector<std::uint8_t>(40 * 30 * 3, 200)};
  Raster lab{40, 30, 1, std::vector<std::uint8_t>(40 * 30, 1)};
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  write_netpbm(dir / "images" / "0000.ppm", img);
  write_netpbm(dir / "labels" / "0000.pgm", lab);
  write_pose_file(dir / "poses.txt", {Pose{}});
  const auto ds = load_dataset(dir);
  const auto& s = ds.samples[0];
  EXPECT_EQ(s.width, 64u);
  EXPECT_EQ(s.height, 32u);
  EXPECT_EQ(s.valid_width, 40u);
  EXPECT_EQ(s.valid_height, 30u);
  EXPECT_EQ(s.labels[0], 1u);
  EXPECT_EQ(s.labels[45], 0u);        // right padding
  EXPECT_EQ(s.labels[31 * 64 + 5], 0u);  // bottom padding
  EXPECT_EQ(s.image[31 * 64 + 5], 0.0);
  EXPECT_DOUBLE_EQ(ds.intrinsics.cx, 20.0);
}

TEST(Dataset, CountMismatchListsCounts) {
  const auto scene = generate_scene(SceneSpec{2, 3, 3, 64, 32});
  const fs::path dir = scratch("mismatch");
  write_dataset(dir, scene);
  write_pose_file(dir / "poses.txt", {scene.samples[0].pose, scene.samples[1].pose});
  const auto msg = error_of([&] { (void)load_dataset(dir); });
  EXPECT_NE(msg.find("3 images"), std::string::npos) << msg;
  EXPECT_NE(msg.find("2"), std::string::npos) << msg;
}

TEST(Dataset, ManifestNeedsIntrinsics) {
  const fs::path dir = scratch("manifest");
  std::ofstream(dir / "manifest.txt") << "classes=3\nviews=1\nwidth=64\nheight=32\nfx=50\nfy=50\ncx=32\n";
  const auto msg = error_of([&] { (void)read_manifest(dir / "manifest.txt"); });
  EXPECT_NE(msg.find("cy"), std::string::npos) << msg;
}

TEST(Split, RatioArithmeticAndDeterminism) {
  Dataset d;
  d.samples.resize(20);
  for (std::size_t i = 0; i < 20; ++i) d.samples[i].width = i;
  const auto a = split_dataset(d, 0.1, 4);
  EXPECT_EQ(a.train.samples.size(), 18u);
  EXPECT_EQ(a.val.samples.size(), 2u);
  const auto b = split_dataset(d, 0.1, 4);
  EXPECT_EQ(a.val_index, b.val_index);
  EXPECT_EQ(a.train_index, b.train_index);
  const auto none = split_dataset(d, 0.0, 4);
  EXPECT_TRUE(none.val.samples.empty());
  EXPECT_EQ(none.train.samples.size(), 20u);
  EXPECT_THROW((void)split_dataset(d, 1.0, 4), ConfigError);
}
