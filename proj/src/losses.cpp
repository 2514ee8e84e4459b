#include "poseforge/losses.hpp"

#include <string>

#include "op_support.hpp"
#include "poseforge/errors.hpp"

namespace poseforge {

PoseLossState::PoseLossState(double s_x_init, double s_q_init)
    : s_x(trainable_scalar(s_x_init)), s_q(trainable_scalar(s_q_init)) {}

PoseLossTerms pose_loss(const Tensor& pred_x, const Tensor& pred_q, const Tensor& gt_x, const Tensor& gt_q,
                        const PoseLossState& state) {
  if (pred_x.shape() != gt_x.shape() || pred_x.rank() != 2 || pred_x.dim(1) != 3) {
    detail::shape_mismatch("pose_loss translation", pred_x.shape(), gt_x.shape());
  }
  if (pred_q.shape() != gt_q.shape() || pred_q.rank() != 2 || pred_q.dim(1) != 4 ||
      pred_q.dim(0) != pred_x.dim(0)) {
    detail::shape_mismatch("pose_loss rotation", pred_q.shape(), gt_q.shape());
  }
  PoseLossTerms out;
  out.translation = mean(norm_l2(sub(gt_x, pred_x)));
  out.rotation = mean(norm_l2(sub(gt_q, normalize_quaternion(pred_q))));
  const Tensor lx = reshape(out.translation, {1});
  const Tensor lq = reshape(out.rotation, {1});
  const Tensor total = add(add(mul(lx, exp(neg(state.s_x))), state.s_x), add(mul(lq, exp(neg(state.s_q))), state.s_q));
  out.total = reshape(total, {});
  return out;
}

namespace {

void check_labels(std::size_t classes, std::span<const std::size_t> labels, std::size_t width) {
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= classes) {
      throw DataError("label " + std::to_string(labels[p]) + " at pixel (x=" + std::to_string(p % width) +
                      ", y=" + std::to_string(p / width) + ") is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// [C, H, W] -> [H*W, C] after checking labels.
Tensor pixel_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 3) throw DimensionError("semantic logits must be [C,H,W], got " + to_string(logits.shape()));
  const std::size_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  if (labels.size() != H * W) {
    throw DimensionError("label map has " + std::to_string(labels.size()) + " pixels, logits " + to_string(logits.shape()));
  }
  check_labels(C, labels, W);
  return transpose_last2(reshape(logits, {C, H * W}));
}

void check_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("expected [" + std::to_string(labels.size()) + ", C] logits, got " + to_string(logits.shape()));
  }
  check_labels(logits.dim(1), labels, labels.size());
}

Tensor ce_unchecked(const Tensor& rows, std::span<const std::size_t> labels) {
  return neg(mean(gather_last(log_softmax_rows(rows), labels)));
}

// cos = <p, onehot> / (|p| |onehot|) = p[gt] / |p|. The angle goes through the
// double-angle form acos(2 cos^2 - 1) / 2 so that cos^2 = p[gt]^2 / sum p^2 never
// rounds a square root, which keeps 0, pi/4 and pi/2 exact.
Tensor sam_unchecked(const Tensor& rows, std::span<const std::size_t> labels) {
  const Tensor p = softmax_rows(rows);
  const Tensor cos2 = div(square(gather_last(p, labels)), sum_axis(square(p), 1));
  return mul_scalar(mean(arccos_grad_clamped(add_scalar(mul_scalar(cos2, 2.0), -1.0))), 0.5);
}

Tensor combine(const Tensor& rows, std::span<const std::size_t> labels, double ce_weight, double sam_weight) {
  if (ce_weight < 0.0 || sam_weight < 0.0) throw ConfigError("semantic loss weights must be nonnegative");
  return add(mul_scalar(ce_unchecked(rows, labels), ce_weight), mul_scalar(sam_unchecked(rows, labels), sam_weight));
}

}  // namespace

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  check_rows(logits, labels);
  return ce_unchecked(logits, labels);
}

Tensor sam_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  check_rows(logits, labels);
  return sam_unchecked(logits, labels);
}

Tensor semantic_loss_rows(const Tensor& logits, std::span<const std::size_t> labels, double ce_weight,
                          double sam_weight) {
  check_rows(logits, labels);
  return combine(logits, labels, ce_weight, sam_weight);
}

Tensor semantic_ce(const Tensor& logits, std::span<const std::size_t> labels) {
  return ce_unchecked(pixel_rows(logits, labels), labels);
}

Tensor sam_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  return sam_unchecked(pixel_rows(logits, labels), labels);
}

Tensor semantic_loss(const Tensor& logits, std::span<const std::size_t> labels, const SemanticLossWeights& weights) {
  return combine(pixel_rows(logits, labels), labels, weights.ce, weights.sam);
}

Tensor total_loss(const Tensor& pose_term, const Tensor& semantic_term, double lambda_p, double lambda_s) {
  if (lambda_p < 0.0 || lambda_s < 0.0) throw ConfigError("loss weights lambda_p and lambda_s must be nonnegative");
  Tensor out;
  if (lambda_p > 0.0) out = mul_scalar(pose_term, lambda_p);
  if (lambda_s > 0.0) out = out.defined() ? add(out, mul_scalar(semantic_term, lambda_s)) : mul_scalar(semantic_term, lambda_s);
  if (!out.defined()) out = Tensor::scalar(0.0);
  return out;
}

}  // namespace poseforge
