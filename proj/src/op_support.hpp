#pragma once

#include <Eigen/Core>
#include <span>
#include <string>

#include "poseforge/errors.hpp"
#include "poseforge/tensor.hpp"

namespace poseforge::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

/// Gradient storage of an op input, or an empty span when it needs none.
inline std::span<double> grad_of(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                       to_string(b));
}

/// 1-D bilinear taps with half-pixel centers: output i reads inputs i0, i1.
struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(std::size_t n_in, std::size_t n_out);

}  // namespace poseforge::detail
