#pragma once

#include <span>
#include <vector>

#include "poseforge/geometry.hpp"
#include "poseforge/nn.hpp"

namespace poseforge {

/// Per-point field values for P query points.
struct FieldOutput {
  Tensor sigma;   // [P], nonnegative density
  Tensor logits;  // [P, C]
  Tensor rgb;     // [P, 3] in [0, 1]
};

/// Anything that maps world positions to density, class logits and color.
/// Implementations consume positions only; there is no view direction.
class SceneField {
 public:
  virtual ~SceneField() = default;
  [[nodiscard]] virtual FieldOutput evaluate(const Tensor& points) const = 0;
  [[nodiscard]] virtual std::size_t num_classes() const = 0;
};

struct SemanticFieldConfig {
  std::size_t classes = 3;
  std::size_t freq_bands = 6;
  std::size_t width = 128;
  std::size_t depth = 4;
};

/// [P, 3] -> [P, 6 * bands + 3]: for k < bands, sin(2^k pi x) and
/// cos(2^k pi x) per coordinate, followed by the raw coordinates.
[[nodiscard]] Tensor frequency_encode(const Tensor& points, std::size_t bands);

/// Coordinate MLP with softplus density, raw semantic logits and sigmoid RGB.
class SemanticField final : public SceneField {
 public:
  SemanticField(const SemanticFieldConfig& cfg, Rng& rng);

  [[nodiscard]] FieldOutput evaluate(const Tensor& points) const override;
  [[nodiscard]] std::size_t num_classes() const override { return cfg_.classes; }

  /// Zeroes the three output heads (density, semantics, color).
  void zero_heads();
  [[nodiscard]] ParamList parameters() const;
  /// Turns gradient recording of every weight on or off.
  void set_trainable(bool on);
  [[nodiscard]] const SemanticFieldConfig& config() const noexcept { return cfg_; }

  std::vector<Linear> trunk;
  Linear sigma_head, semantic_head, rgb_head;

 private:
  SemanticFieldConfig cfg_;
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  std::size_t width = 1, height = 1;

  /// Throws ConfigError unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
  [[nodiscard]] std::size_t strided_width(std::size_t stride) const { return (width + stride - 1) / stride; }
  [[nodiscard]] std::size_t strided_height(std::size_t stride) const { return (height + stride - 1) / stride; }
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

struct RayBatch {
  Tensor origins;     // [R, 3]
  Tensor directions;  // [R, 3], unit length
  double near = 0.1;
  double far = 10.0;
  std::size_t samples = 32;

  [[nodiscard]] std::size_t size() const { return origins.dim(0); }
};

/// Unit camera-frame directions [R, 3] for pixels (u, v) = (s*i, s*j), row-major.
[[nodiscard]] Tensor camera_directions(const Intrinsics& k, std::size_t stride);

/// Pinhole rays for the strided pixel grid of a camera.
[[nodiscard]] RayBatch generate_rays(const Camera& camera, double near, double far, std::size_t samples,
                                     std::size_t stride = 1);

/// Same rays from a pose held in tensors, so the ray geometry stays
/// differentiable. translation: [3]; unit_rotation: [4] scalar-first.
[[nodiscard]] RayBatch rays_from_pose(const Intrinsics& k, std::size_t stride, const Tensor& translation,
                                      const Tensor& unit_rotation, double near, double far,
                                      std::size_t samples);

/// Depths t and spacings delta for `rays` rays of `samples` points each. Train
/// mode jitters one sample uniformly inside each of the equal bins of
/// [near, far]; eval mode uses bin midpoints. The last spacing of a ray is the
/// bin width.
struct SampleSchedule {
  std::vector<double> t;
  std::vector<double> delta;
};
[[nodiscard]] SampleSchedule stratified_samples(std::size_t rays, double near, double far, std::size_t samples,
                                                Mode mode, Rng* rng);

/// Points o_r + t_{r,s} d_r, [R * S, 3].
[[nodiscard]] Tensor ray_points(const Tensor& origins, const Tensor& directions, std::span<const double> t,
                                std::size_t samples);

struct VolumeRenderResult {
  Tensor integrated;                       // [R, K] = sum_i w_i v_i
  std::vector<double> weights;             // [R * S]
  std::vector<double> transmittance_end;   // [R]
};

/// w_i = T_i (1 - exp(-sigma_i delta_i)), T_i = exp(-sum_{j<i} sigma_j delta_j).
/// sigma: [R, S]; values: [R, S, K]; delta: R * S spacings. Differentiable
/// in sigma and values.
[[nodiscard]] VolumeRenderResult volume_render(const Tensor& sigma, const Tensor& values,
                                               std::span<const double> delta);

struct RenderResult {
  Tensor logits;  // [R, C]
  Tensor rgb;     // [R, 3]
  std::vector<double> weights;
  std::vector<double> transmittance_end;
};

/// Renders every ray of the batch through the field.
[[nodiscard]] RenderResult render_rays(const SceneField& field, const RayBatch& rays, Mode mode,
                                       Rng* rng = nullptr);

struct RenderedImage {
  Tensor logits;  // [C, H', W']
  Tensor rgb;     // [3, H', W']
  [[nodiscard]] std::vector<std::size_t> labels() const;  // argmax per pixel, row-major
};

/// Deterministic (bin-midpoint) render of the strided pixel grid without
/// gradients. Rows are split across POSEFORGE_THREADS worker threads.
[[nodiscard]] RenderedImage render_image(const Camera& camera, const SceneField& field, std::size_t stride,
                                         double near, double far, std::size_t samples);

/// Worker count for rendering: POSEFORGE_THREADS when set and positive,
/// otherwise the hardware concurrency.
[[nodiscard]] std::size_t render_thread_count();

/// Row-wise argmax of a [R, C] tensor.
[[nodiscard]] std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace poseforge
