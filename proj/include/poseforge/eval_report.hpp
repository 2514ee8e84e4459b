#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "poseforge/geometry.hpp"

namespace poseforge {

/// Geodesic angle between two unit quaternions, in degrees, in [0, 180].
/// Insensitive to the sign of either argument.
[[nodiscard]] double rotation_error_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

[[nodiscard]] double translation_error_m(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Lower middle for even counts, so the result is always one of the values.
[[nodiscard]] double median(std::vector<double> values);

struct SceneMetrics {
  std::string scene;
  double median_translation_m = 0.0;
  double median_rotation_deg = 0.0;
  std::vector<double> translation_errors;
  std::vector<double> rotation_errors;
};

/// Per-frame errors and their medians. Length mismatch throws DataError.
[[nodiscard]] SceneMetrics evaluate_scene(const std::string& scene, std::span<const Pose> predicted,
                                          std::span<const Pose> ground_truth);

struct Average {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

/// Mean of the per-scene medians (compensated summation, so the result does
/// not depend on scene order). Throws UsageError on an empty list.
[[nodiscard]] Average aggregate(std::span<const SceneMetrics> scenes);

/// "t/r" with two decimals.
[[nodiscard]] std::string format_cell(double translation_m, double rotation_deg);

/// Plain-text table: one row per scene plus the average row.
[[nodiscard]] std::string format_report(std::span<const SceneMetrics> scenes);

/// Writes <stem>_pred.txt, <stem>_gt.txt and <stem>_errors.csv
/// (frame,t_err_m,r_err_deg) into `dir`.
void export_trajectory(std::span<const Pose> predicted, std::span<const Pose> ground_truth,
                       const std::filesystem::path& dir, const std::string& stem = "trajectory");

}  // namespace poseforge
