#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "poseforge/tensor.hpp"

namespace poseforge {

enum class Mode { train, eval };

// Elementwise binary ops. The second operand may have the same shape as the
// first, a suffix of its shape (broadcast over leading axes), or one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor relu6(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);

inline constexpr double kArccosClamp = 1e-7;
/// arccos of the argument clamped into [-1 + eps, 1 - eps].
Tensor arccos_clamped(const Tensor& a, double eps = kArccosClamp);
/// Exact arccos on [-1, 1] whose gradient is that of arccos_clamped, so
/// parallel and orthogonal vectors give exactly 0 and pi/2.
Tensor arccos_grad_clamped(const Tensor& a, double eps = kArccosClamp);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);
/// Euclidean norm over the last axis.
Tensor norm_l2(const Tensor& a);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

/// Matrix product of rank-2 or batched rank-3 operands; a rank-2 operand is
/// shared across the batch of the other.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Picks a[..., index[r]] for every row r of the last axis.
Tensor gather_last(const Tensor& a, std::span<const std::size_t> index);

/// 2-D convolution. x is [B,C,H,W] or [C,H,W]; weight is [O,C,k,k].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// Running statistics of a batch-normalization layer. Stored as tensors so
/// checkpoints treat them like any other named block.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  Tensor batches_tracked;  // one element
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormStats identity(std::size_t channels);
};

/// Batch normalization over every axis except channels ([B,C,H,W] or [C,H,W]).
/// Train mode normalizes with batch statistics and updates the running ones;
/// eval mode needs at least one tracked batch.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                 Mode mode);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Bilinear resize of the last two axes, half-pixel centers (align_corners=false).
Tensor bilinear_resize(const Tensor& a, std::size_t out_h, std::size_t out_w);
Tensor bilinear_upsample2x(const Tensor& a);

/// Dense [n_out x n_in] matrix of the 1-D bilinear resampling used by
/// bilinear_resize.
std::vector<double> interpolation_matrix(std::size_t n_in, std::size_t n_out);

}  // namespace poseforge
