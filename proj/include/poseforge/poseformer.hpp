#pragma once

#include <array>
#include <optional>
#include <vector>

#include "poseforge/backbone.hpp"
#include "poseforge/nn.hpp"

namespace poseforge {

struct PoseFormerConfig {
  std::size_t dim = 256;       // channel width of every scale; equals backbone proj_dim
  std::size_t attn_dim = 256;  // query/key width d_k
  std::size_t heads = 1;
  bool ffn = false;            // pre-norm feed-forward sublayer after attention
  std::size_t ffn_hidden = 512;
  std::size_t shared_dim = 1280;
  std::vector<std::size_t> head_hidden{512, 128};
  double omega_current_init = 1.0;
  double omega_previous_init = 0.0;
  double alpha_init = 1.0;
};

struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;
  [[nodiscard]] std::size_t tokens() const noexcept { return height * width; }
};

/// [B, d, H, W] -> [B, H*W, d] (row-major token order).
[[nodiscard]] Tensor grid_to_tokens(const Tensor& grid);
/// [B, H*W, d] -> [B, d, H, W].
[[nodiscard]] Tensor tokens_to_grid(const Tensor& tokens, GridSize grid);

/// Resamples attention logits [B, n, n] defined on a `from` grid to the `to`
/// grid by bilinear interpolation over both the query and the key grid.
[[nodiscard]] Tensor resize_attention(const Tensor& attention, GridSize from, GridSize to);

struct AttentionResult {
  Tensor out;               // [B, N, d]
  std::vector<Tensor> raw;  // per head, [B, N, N], Q K^T / sqrt(d_k) before fusion
};

/// Attention at one scale whose pre-softmax logits are blended with the
/// resized logits of the coarser scale:
///   A' = w_cur * (Q K^T / sqrt(d_k)) + w_prev * resize(A_prev)
///   out = softmax_rows(A') V
class CrossScaleAttention {
 public:
  CrossScaleAttention() = default;
  CrossScaleAttention(const PoseFormerConfig& cfg, bool has_previous, Rng& rng);

  /// `previous` carries the coarser scale's raw logits (one per head) and the
  /// grid they live on; absent at the coarsest scale.
  [[nodiscard]] AttentionResult forward(const Tensor& tokens, GridSize grid,
                                        const std::vector<Tensor>* previous,
                                        GridSize previous_grid) const;

  void collect(ParamList& out, const std::string& prefix) const;

  // Keys carry no bias: softmax ignores a per-query constant, so it would never train.
  Linear proj_q, proj_k, proj_v;
  Tensor omega_current;
  Tensor omega_previous;  // undefined at the coarsest scale
  std::size_t heads = 1;
};

/// softmax_rows(w_cur * Q K^T / sqrt(d_k)) V computed without any cross-scale
/// input; the reference the fused path must reproduce when w_prev = 0.
[[nodiscard]] Tensor single_scale_attention(const CrossScaleAttention& attn, const Tensor& tokens);

/// Sinusoidal table [d, H, W]: the first d/2 channels encode the row index,
/// the last d/2 the column index; channel c of a half is sin(p / 10000^(2c/d))
/// for even c and cos(...) for odd c.
[[nodiscard]] Tensor positional_table(std::size_t channels, GridSize grid);

/// features + alpha * positional_table. features: [B, d, H, W] or [d, H, W].
[[nodiscard]] Tensor positional_encode(const Tensor& features, const Tensor& alpha);

/// Bilinear 2x upsampling followed by 3x3 conv, batch norm and relu.
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(std::size_t channels, Rng& rng);

  [[nodiscard]] Tensor forward(const Tensor& grid, Mode mode);
  void collect(ParamList& out, const std::string& prefix) const;

  Conv2d conv;
  BatchNorm2d bn;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, Rng& rng);

  [[nodiscard]] Tensor forward(const Tensor& tokens) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor ln_gamma, ln_beta;
  Linear fc1, fc2;
};

struct ScaleTrace {
  GridSize grid;
  Tensor tokens_in;   // position-encoded tokens fed to attention
  Tensor tokens_out;  // attention output
  std::vector<Tensor> raw_attention;
};

struct PoseFormerOutput {
  Tensor translation;  // [B, 3]
  Tensor rotation;     // [B, 4], unnormalized, scalar-first
  std::array<ScaleTrace, 3> scales;  // coarse to fine: strides 32, 16, 8
};

/// Hierarchical up-sampling transformer with a dual translation/rotation head.
class PoseFormer {
 public:
  PoseFormer(const PoseFormerConfig& cfg, Rng& rng);

  [[nodiscard]] PoseFormerOutput forward(const MultiScaleFeatures& features, Mode mode);

  [[nodiscard]] ParamList parameters() const;
  [[nodiscard]] const PoseFormerConfig& config() const noexcept { return cfg_; }

  std::array<CrossScaleAttention, 3> attention;  // coarse to fine
  std::array<Tensor, 3> alpha;
  std::array<UpsampleBlock, 2> upsample;
  std::array<FeedForward, 3> ffn;
  Linear shared;
  std::vector<Linear> translation_head;
  std::vector<Linear> rotation_head;

 private:
  PoseFormerConfig cfg_;
};

}  // namespace poseforge
