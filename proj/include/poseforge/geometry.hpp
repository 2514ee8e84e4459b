#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "poseforge/tensor.hpp"

namespace poseforge {

/// Camera-to-world rigid transform. Rotation is a unit quaternion; the
/// library's convention is scalar-first (w, x, y, z).
struct Pose {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
};

/// Flips q to -q when its scalar part is negative.
[[nodiscard]] Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q);

/// Normalizes and canonicalizes; throws DataError when the norm is below 1e-6.
[[nodiscard]] Eigen::Quaterniond sanitize_quaternion(const Eigen::Quaterniond& q);

/// Pose.rotation as a [4] tensor (w, x, y, z).
[[nodiscard]] Tensor quaternion_tensor(const Eigen::Quaterniond& q);

/// Camera orientation looking from `eye` towards `target`, camera axes
/// x right, y down, z forward; `up` is the world up direction.
[[nodiscard]] Eigen::Quaterniond look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                         const Eigen::Vector3d& up);

inline constexpr double kQuaternionNormFloor = 1e-16;  // added to the squared norm

/// q / sqrt(|q|^2 + 1e-16) over the last axis ([..., 4]).
[[nodiscard]] Tensor normalize_quaternion(const Tensor& q);

/// Rotation matrix [3, 3] of a unit quaternion [4] (w, x, y, z), differentiable.
[[nodiscard]] Tensor quat_to_rotmat(const Tensor& q);

}  // namespace poseforge
