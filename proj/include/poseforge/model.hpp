#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "poseforge/backbone.hpp"
#include "poseforge/checkpoint.hpp"
#include "poseforge/config.hpp"
#include "poseforge/data_io.hpp"
#include "poseforge/losses.hpp"
#include "poseforge/poseformer.hpp"
#include "poseforge/semantic_field.hpp"

namespace poseforge {

[[nodiscard]] BackboneConfig backbone_config(const RunConfig& cfg);
[[nodiscard]] PoseFormerConfig poseformer_config(const RunConfig& cfg);
[[nodiscard]] SemanticFieldConfig field_config(const RunConfig& cfg, std::size_t classes);

/// Backbone, transformer and the learned loss weights, built from one config.
class PoseModel {
 public:
  PoseModel(const RunConfig& cfg, Rng& rng);

  /// images: [B, 3, H, W].
  [[nodiscard]] PoseFormerOutput forward(const Tensor& images, Mode mode);

  /// Eval-mode predictions, normalized and canonicalized, `batch` images at a time.
  [[nodiscard]] std::vector<Pose> predict(const std::vector<Sample>& samples, std::size_t batch = 8);

  /// Every named tensor (buffers included), loss weights last.
  [[nodiscard]] ParamList parameters() const;
  /// What an optimizer may update under the backbone's freeze policy.
  [[nodiscard]] ParamList trainable_parameters() const;

  [[nodiscard]] const RunConfig& config() const noexcept { return cfg_; }

  Backbone backbone;
  PoseFormer former;
  PoseLossState loss_state;

 private:
  RunConfig cfg_;
};

/// Model weights plus the config that rebuilds the architecture.
[[nodiscard]] Checkpoint model_checkpoint(const PoseModel& model);
[[nodiscard]] std::unique_ptr<PoseModel> load_pose_model(const std::filesystem::path& path);

[[nodiscard]] Checkpoint field_checkpoint(const SemanticField& field, const RunConfig& cfg);
[[nodiscard]] std::unique_ptr<SemanticField> load_field(const std::filesystem::path& path);

/// Parses a serialized config stored in checkpoint metadata.
[[nodiscard]] RunConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace poseforge
