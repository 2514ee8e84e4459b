#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "poseforge/model.hpp"
#include "poseforge/optim.hpp"

namespace poseforge {

struct Stage1Config {
  std::size_t epochs = 2000;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch = 8;
  double plateau_factor = 0.95;
  std::size_t plateau_patience = 50;
  std::size_t early_stop = 200;
  std::size_t checkpoint_every = 10;
  std::uint64_t seed = 7;

  static Stage1Config from(const RunConfig& cfg);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_error = 0.0;  // mean ||x0 - x|| + ||q0 - q|| over the epoch's batches
  double val_loss = 0.0;     // NaN without a validation split
  double lr = 0.0;           // rate used during the epoch
};

struct Stage1Result {
  std::vector<EpochRecord> history;
  bool early_stopped = false;
  std::filesystem::path best;
  std::filesystem::path last;
};

/// Pose-supervised training. Writes best.pfck (lowest monitored loss),
/// last.pfck (resumable state) and metrics.csv into `dir`, resuming from
/// last.pfck when it exists. The monitored loss is the validation loss, or
/// the training loss when the split is empty.
Stage1Result run_stage1(PoseModel& model, const DatasetSplit& data, const Stage1Config& cfg,
                        const std::filesystem::path& dir, std::ostream* log = nullptr);

struct Stage2Config {
  std::size_t steps = 4000;
  double lr = 1e-3;
  double decay = 0.1;
  double weight_decay = 0.0;
  double ce_weight = 0.04;
  std::size_t rays = 1024;
  std::size_t samples = 64;
  double near = 0.1;
  double far = 10.0;
  std::size_t checkpoint_every = 250;
  std::uint64_t seed = 7;

  /// Bounds come from the config when set explicitly, otherwise from the manifest.
  static Stage2Config from(const RunConfig& cfg, const SceneManifest& manifest);
};

struct Stage2Terms {
  Tensor total;
  Tensor rgb;  // mean squared error
  Tensor ce;
};

/// mean |rgb - target|^2 + ce_weight * cross-entropy for one ray batch.
/// rgb_targets: R * 3 values; labels: R ids.
[[nodiscard]] Stage2Terms stage2_loss(const SceneField& field, const RayBatch& rays,
                                      std::span<const double> rgb_targets, std::span<const std::size_t> labels,
                                      double ce_weight, Mode mode, Rng* rng);

struct Stage2Result {
  std::vector<double> loss;
  std::filesystem::path field;
  std::filesystem::path last;
};

/// Fits the field to the training views at their ground-truth poses: each
/// step renders `rays` random valid pixels with jittered samples. Writes
/// field.pfck, last.pfck and metrics.csv into `dir`.
Stage2Result run_stage2(SemanticField& field, const RunConfig& run, const Dataset& train, const Stage2Config& cfg,
                        const std::filesystem::path& dir, std::ostream* log = nullptr);

struct Stage3Config {
  std::size_t steps = 300;
  double lr = 1e-5;
  double weight_decay = 0.0;
  std::size_t batch = 8;
  SemanticLossWeights weights{};
  std::size_t render_stride = 8;
  std::size_t samples = 64;
  double near = 0.1;
  double far = 10.0;
  std::size_t checkpoint_every = 25;
  std::uint64_t seed = 7;

  static Stage3Config from(const RunConfig& cfg, const SceneManifest& manifest);
};

/// Class labels the field renders at each sample's ground-truth pose.
[[nodiscard]] std::vector<std::vector<std::size_t>> reference_labels(const SceneField& field, const Dataset& data,
                                                                     const Stage3Config& cfg);

/// Semantic loss between renders at the predicted poses of `batch` and the
/// reference labels, averaged over the batch. Gradients reach the model
/// through the ray origins and directions.
[[nodiscard]] Tensor stage3_loss(PoseModel& model, const SceneField& field, const Intrinsics& k,
                                 const std::vector<const Sample*>& batch,
                                 const std::vector<const std::vector<std::size_t>*>& labels, const Stage3Config& cfg);

struct Stage3Result {
  std::vector<double> loss;
  std::filesystem::path model;
  std::filesystem::path last;
};

/// Semantic-consistency refinement: backbone convolutions frozen (batch-norm
/// affine still trains), field untouched. Writes refined.pfck, last.pfck and
/// metrics.csv into `dir`.
Stage3Result run_stage3(PoseModel& model, const SceneField& field, const Dataset& train, const Stage3Config& cfg,
                        const std::filesystem::path& dir, std::ostream* log = nullptr);

/// Appends `key=value` metadata describing an RNG state, and reads it back.
[[nodiscard]] std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace poseforge
