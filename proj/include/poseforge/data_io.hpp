#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "poseforge/geometry.hpp"
#include "poseforge/nn.hpp"
#include "poseforge/semantic_field.hpp"

namespace poseforge {

// ---- pose files ------------------------------------------------------------
//
// One pose per line, "tx ty tz qx qy qz qw". The file stores the quaternion
// scalar-last; in memory it is scalar-first, canonicalized to w >= 0.

[[nodiscard]] std::vector<Pose> parse_pose_text(const std::string& text, const std::string& origin = "<text>");
[[nodiscard]] std::vector<Pose> parse_pose_file(const std::filesystem::path& path);
[[nodiscard]] std::string format_pose(const Pose& pose);
void write_pose_file(const std::filesystem::path& path, const std::vector<Pose>& poses);

// ---- netpbm images ---------------------------------------------------------

/// 8-bit raster, interleaved channels (1 or 3), row-major.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads P2/P3/P5/P6 with maxval 255.
[[nodiscard]] Raster read_netpbm(const std::filesystem::path& path);
/// Binary P6/P5 when `binary`, plain-text P3/P2 otherwise.
void write_netpbm(const std::filesystem::path& path, const Raster& raster, bool binary = true);

/// [3, H, W] values in [0, 1] <-> 8-bit RGB.
[[nodiscard]] Raster to_raster(const Tensor& image);
[[nodiscard]] Tensor from_raster(const Raster& raster);

// ---- scene manifest --------------------------------------------------------

struct SceneManifest {
  std::string name = "scene";
  std::size_t classes = 0;
  std::size_t views = 0;
  double near = 0.1;
  double far = 10.0;
  std::uint64_t seed = 0;
  Intrinsics intrinsics;
};

/// key=value text. width, height, fx, fy, cx, cy, classes and views are
/// mandatory; missing ones throw DataError.
[[nodiscard]] SceneManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const SceneManifest& m);

// ---- synthetic scenes ------------------------------------------------------

/// Dense cube of class ids over [lo, hi]^3; 0 is empty space.
struct VoxelGrid {
  std::size_t resolution = 16;
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::uint8_t> cells;  // index (z * n + y) * n + x

  [[nodiscard]] double voxel_size() const { return (hi - lo) / static_cast<double>(resolution); }
  [[nodiscard]] std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return cells[(z * resolution + y) * resolution + x];
  }
  void fill(std::array<std::size_t, 3> from, std::array<std::size_t, 3> to, std::uint8_t id);
};

struct VoxelHit {
  std::uint8_t label = 0;  // 0 when the ray escapes
  double t = 0.0;
  int axis = -1;  // axis of the entered face
  std::array<std::size_t, 3> cell{};
};

/// Exact grid traversal (Amanatides-Woo). Reports the first occupied cell
/// entered with t in [near, far].
[[nodiscard]] VoxelHit march(const VoxelGrid& grid, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                             double near, double far);

/// A labelled image with its pose. valid_width/height mark the region that
/// holds real pixels; the rest is padding.
struct Sample {
  Tensor image;  // [3, H, W] in [0, 1]
  Pose pose;
  std::vector<std::size_t> labels;  // H * W ids, empty when unlabeled
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t valid_width = 0;
  std::size_t valid_height = 0;
};

struct SyntheticScene {
  SceneManifest manifest;
  VoxelGrid grid;
  std::vector<std::array<double, 3>> colors;  // per class
  std::vector<Sample> samples;
};

struct SceneSpec {
  std::uint64_t seed = 1;
  std::size_t classes = 3;
  std::size_t views = 20;
  std::size_t width = 96;
  std::size_t height = 64;
};

/// Random boxes on a floor slab, viewed from a jittered orbit. Images and
/// labels come from `march`. Throws DataError when a view cannot reach a
/// 50% hit fraction within 100 attempts.
[[nodiscard]] SyntheticScene generate_scene(const SceneSpec& spec);

/// Renders one view of a voxel grid; label 0 and black where rays escape.
[[nodiscard]] Sample render_voxels(const VoxelGrid& grid, const std::vector<std::array<double, 3>>& colors,
                                   const Camera& camera, double near, double far);

/// manifest.txt, poses.txt, images/NNNN.ppm, labels/NNNN.pgm.
void write_dataset(const std::filesystem::path& dir, const SyntheticScene& scene);

// ---- datasets --------------------------------------------------------------

struct Dataset {
  SceneManifest manifest;
  Intrinsics intrinsics;  // after resizing; padding keeps it unchanged
  std::vector<Sample> samples;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
};

struct LoadOptions {
  std::size_t resize_width = 0;  // 0 keeps the native size
  std::size_t resize_height = 0;
};

/// Reads a dataset directory. Images are optionally resized (labels nearest
/// neighbour) and then padded on the bottom/right to multiples of 32 with
/// black pixels and label 0. Image and pose counts must match.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& opts = {});

/// Seeded split: round(n * val_ratio) views go to validation.
[[nodiscard]] DatasetSplit split_dataset(const Dataset& data, double val_ratio, std::uint64_t seed);

/// Stacks sample images into [B, 3, H, W].
[[nodiscard]] Tensor stack_images(const std::vector<const Sample*>& batch);

}  // namespace poseforge
