#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "poseforge/nn.hpp"

namespace poseforge {

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::array<std::size_t, 3> stage_channels{32, 96, 1280};
  std::size_t proj_dim = 256;
  std::size_t blocks_per_stage = 2;
};

/// Projected feature maps at strides 8, 16 and 32, all with proj_dim channels.
/// Each map is [B, proj_dim, H/s, W/s].
struct MultiScaleFeatures {
  Tensor f1;
  Tensor f2;
  Tensor f3;
};

enum class FreezePolicy { full_train, freeze_all_but_bn };

/// Throws ConfigError when height or width is not a positive multiple of 32;
/// the message names the nearest valid sizes.
void check_input_resolution(std::size_t height, std::size_t width);

/// Three-stage convolutional extractor.
///
/// Stage 1 reaches stride 8 through two stride-2 stem convolutions followed by
/// a stride-2 block; stages 2 and 3 each open with a stride-2 3x3 block. The
/// remaining `blocks_per_stage - 1` blocks of every stage are pointwise
/// (1x1) conv + BN + relu6. A 1x1 projection with bias maps each stage output
/// to `proj_dim` channels.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, Rng& rng);

  /// images: [B, 3, H, W] or [3, H, W].
  [[nodiscard]] MultiScaleFeatures extract(const Tensor& images, Mode mode);

  void set_frozen(FreezePolicy policy) { policy_ = policy; }
  [[nodiscard]] FreezePolicy frozen() const noexcept { return policy_; }

  /// Every named tensor, buffers included.
  [[nodiscard]] ParamList parameters() const;
  /// Entries the optimizer may update under the current freeze policy.
  [[nodiscard]] ParamList trainable_parameters() const;

  [[nodiscard]] const BackboneConfig& config() const noexcept { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<ConvBnAct> stem_;
  std::array<std::vector<ConvBnAct>, 3> stages_;
  std::array<Conv2d, 3> projections_;
  FreezePolicy policy_ = FreezePolicy::full_train;
};

}  // namespace poseforge
