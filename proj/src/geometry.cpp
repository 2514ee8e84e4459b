#include "poseforge/geometry.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "op_support.hpp"
#include "poseforge/ops.hpp"

namespace poseforge {

Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q) {
  if (q.w() < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

Eigen::Quaterniond sanitize_quaternion(const Eigen::Quaterniond& q) {
  const double n = q.norm();
  if (!(n >= 1e-6)) throw DataError("quaternion norm " + std::to_string(n) + " is too small to normalize");
  // Already unit to round-off: dividing again would keep flipping low bits,
  // and re-reading a written pose file must give back the same values.
  if (std::abs(n - 1.0) <= 4 * std::numeric_limits<double>::epsilon()) return canonicalize(q);
  return canonicalize(Eigen::Quaterniond(q.coeffs() / n));
}

Tensor quaternion_tensor(const Eigen::Quaterniond& q) {
  return Tensor::from_data({4}, {q.w(), q.x(), q.y(), q.z()});
}

Eigen::Quaterniond look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                           const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.unitOrthogonal();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return canonicalize(Eigen::Quaterniond(r).normalized());
}

Tensor normalize_quaternion(const Tensor& q) {
  if (q.rank() == 0 || q.shape().back() != 4) {
    throw DimensionError("normalize_quaternion expects [..., 4], got " + to_string(q.shape()));
  }
  const std::size_t rows = q.numel() / 4;
  const Tensor flat = reshape(q, {rows, 4});
  const Tensor norm = sqrt(add_scalar(sum_axis(square(flat), 1), kQuaternionNormFloor));
  // [4, rows] / [rows] broadcasts the per-row norm over the components.
  return reshape(transpose_last2(div(transpose_last2(flat), norm)), q.shape());
}

Tensor quat_to_rotmat(const Tensor& q) {
  if (q.shape() != Shape{4}) throw DimensionError("quat_to_rotmat expects [4], got " + to_string(q.shape()));
  const auto& v = q.values();
  const double w = v[0], x = v[1], y = v[2], z = v[3];
  std::vector<double> r{1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
                        2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                        2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return Tensor::make_result("quat_to_rotmat", {3, 3}, std::move(r), {q}, [q](const detail::Node& self) {
    auto gq = detail::grad_of(q);
    const auto& v = q.values();
    const double w = v[0], x = v[1], y = v[2], z = v[3];
    // d R_ij / d (w, x, y, z)
    const std::array<std::array<double, 4>, 9> jac{{
        {0, 0, -4 * y, -4 * z},
        {-2 * z, 2 * y, 2 * x, -2 * w},
        {2 * y, 2 * z, 2 * w, 2 * x},
        {2 * z, 2 * y, 2 * x, 2 * w},
        {0, -4 * x, 0, -4 * z},
        {-2 * x, -2 * w, 2 * z, 2 * y},
        {-2 * y, 2 * z, -2 * w, 2 * x},
        {2 * x, 2 * w, 2 * z, 2 * y},
        {0, -4 * x, -4 * y, 0},
    }};
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 4; ++j) gq[j] += self.grad[i] * jac[i][j];
  });
}

}  // namespace poseforge
