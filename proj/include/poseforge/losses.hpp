#pragma once

#include <span>

#include "poseforge/geometry.hpp"
#include "poseforge/nn.hpp"

namespace poseforge {

/// Learned log-variance weights of the pose loss.
struct PoseLossState {
  Tensor s_x;  // [1]
  Tensor s_q;  // [1]

  explicit PoseLossState(double s_x_init = 0.0, double s_q_init = -3.0);
};

struct PoseLossTerms {
  Tensor total;  // scalar
  Tensor translation;  // mean ||x0 - x||
  Tensor rotation;     // mean ||q0 - q / ||q|| ||
};

/// L_x e^{-s_x} + s_x + L_q e^{-s_q} + s_q, with L_x and L_q averaged over the
/// batch. pred_x / gt_x: [B, 3]; pred_q / gt_q: [B, 4] (w, x, y, z). gt_q must
/// be unit norm; pred_q is normalized here.
[[nodiscard]] PoseLossTerms pose_loss(const Tensor& pred_x, const Tensor& pred_q, const Tensor& gt_x,
                                      const Tensor& gt_q, const PoseLossState& state);

/// Row-wise variants over [N, C] logits with N labels.
[[nodiscard]] Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels);
[[nodiscard]] Tensor sam_rows(const Tensor& logits, std::span<const std::size_t> labels);
[[nodiscard]] Tensor semantic_loss_rows(const Tensor& logits, std::span<const std::size_t> labels,
                                        double ce_weight, double sam_weight);

/// Mean per-pixel cross-entropy. logits: [C, H, W]; labels: H * W class ids.
[[nodiscard]] Tensor semantic_ce(const Tensor& logits, std::span<const std::size_t> labels);

/// Mean angle (radians) between softmax(logits) and the one-hot label.
[[nodiscard]] Tensor sam_loss(const Tensor& logits, std::span<const std::size_t> labels);

struct SemanticLossWeights {
  double ce = 0.7;
  double sam = 0.3;
};

[[nodiscard]] Tensor semantic_loss(const Tensor& logits, std::span<const std::size_t> labels,
                                   const SemanticLossWeights& weights = {});

/// lambda_p * pose + lambda_s * semantic. Either term may be undefined when its
/// weight is zero. Negative weights throw ConfigError.
[[nodiscard]] Tensor total_loss(const Tensor& pose_term, const Tensor& semantic_term, double lambda_p,
                                double lambda_s);

}  // namespace poseforge
