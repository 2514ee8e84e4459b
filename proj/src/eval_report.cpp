#include "poseforge/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "poseforge/data_io.hpp"
#include "poseforge/errors.hpp"
#include "poseforge/ops.hpp"

namespace poseforge {

double rotation_error_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const double dot = std::abs(a.coeffs().dot(b.coeffs()));
  return 2.0 * std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

double translation_error_m(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return (a - b).norm(); }

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty list");
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

SceneMetrics evaluate_scene(const std::string& scene, std::span<const Pose> predicted,
                            std::span<const Pose> ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw DataError(scene + ": " + std::to_string(predicted.size()) + " predicted poses vs " +
                    std::to_string(ground_truth.size()) + " ground-truth poses");
  }
  if (predicted.empty()) throw DataError(scene + ": no poses to evaluate");
  SceneMetrics m;
  m.scene = scene;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    m.translation_errors.push_back(translation_error_m(predicted[i].translation, ground_truth[i].translation));
    m.rotation_errors.push_back(rotation_error_deg(predicted[i].rotation, ground_truth[i].rotation));
  }
  m.median_translation_m = median(m.translation_errors);
  m.median_rotation_deg = median(m.rotation_errors);
  return m;
}

namespace {

// Neumaier's variant of Kahan summation.
double compensated_sum(const std::vector<double>& v) {
  double sum = 0.0, c = 0.0;
  for (const double x : v) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) c += (sum - t) + x;
    else c += (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

}  // namespace

Average aggregate(std::span<const SceneMetrics> scenes) {
  if (scenes.empty()) throw UsageError("cannot average zero scenes");
  std::vector<double> t, r;
  for (const auto& s : scenes) {
    t.push_back(s.median_translation_m);
    r.push_back(s.median_rotation_deg);
  }
  const auto n = static_cast<double>(scenes.size());
  return {compensated_sum(t) / n, compensated_sum(r) / n};
}

std::string format_cell(double translation_m, double rotation_deg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f/%.2f", translation_m, rotation_deg);
  return buf;
}

std::string format_report(std::span<const SceneMetrics> scenes) {
  std::size_t width = 7;
  for (const auto& s : scenes) width = std::max(width, s.scene.size());
  std::string out = "# median translation (m) / median rotation (deg) per scene\n";
  out += "# even frame counts use the lower middle value\n";
  auto row = [&](const std::string& name, const std::string& cell) {
    std::string line = name;
    line.resize(width + 2, ' ');
    out += line + cell + "\n";
  };
  for (const auto& s : scenes) row(s.scene, format_cell(s.median_translation_m, s.median_rotation_deg));
  const Average avg = aggregate(scenes);
  row("Average", format_cell(avg.translation_m, avg.rotation_deg));
  return out;
}

void export_trajectory(std::span<const Pose> predicted, std::span<const Pose> ground_truth,
                       const std::filesystem::path& dir, const std::string& stem) {
  const SceneMetrics m = evaluate_scene(stem, predicted, ground_truth);
  std::filesystem::create_directories(dir);
  write_pose_file(dir / (stem + "_pred.txt"), {predicted.begin(), predicted.end()});
  write_pose_file(dir / (stem + "_gt.txt"), {ground_truth.begin(), ground_truth.end()});
  std::ofstream csv(dir / (stem + "_errors.csv"));
  if (!csv) throw DataError("cannot write " + (dir / (stem + "_errors.csv")).string());
  csv << "frame,t_err_m,r_err_deg\n";
  char buf[96];
  for (std::size_t i = 0; i < m.translation_errors.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, m.translation_errors[i], m.rotation_errors[i]);
    csv << buf;
  }
}

}  // namespace poseforge
