#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "poseforge/checkpoint.hpp"
#include "poseforge/nn.hpp"

namespace poseforge {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam with bias correction. Parameters without a recorded gradient are
/// skipped for that step.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  /// Applies one update. A non-finite gradient throws NumericError naming
  /// the parameter before anything is modified.
  void step();
  void zero_grad();

  void set_lr(double lr) { cfg_.lr = lr; }
  [[nodiscard]] double lr() const noexcept { return cfg_.lr; }
  [[nodiscard]] std::size_t steps() const noexcept { return t_; }
  [[nodiscard]] const ParamList& params() const noexcept { return params_; }

  /// Moments under "adam.m.<name>" / "adam.v.<name>", step count in metadata.
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without a strict improvement of the monitored loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.95, std::size_t patience = 50) : factor_(factor), patience_(patience) {}

  /// Feeds one epoch's loss; returns the learning rate to use next.
  double observe(double loss, double lr);

  [[nodiscard]] double best() const noexcept { return best_; }
  [[nodiscard]] std::size_t stagnant() const noexcept { return stagnant_; }
  void restore(double best, std::size_t stagnant) {
    best_ = best;
    stagnant_ = stagnant;
  }

 private:
  double factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stagnant_ = 0;
};

/// Signals a stop after `patience` consecutive epochs without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience = 200) : patience_(patience) {}

  /// Returns true when training should stop.
  bool observe(double loss);
  /// True when the last observed loss was a new best.
  [[nodiscard]] bool improved() const noexcept { return stagnant_ == 0; }
  [[nodiscard]] double best() const noexcept { return best_; }
  [[nodiscard]] std::size_t stagnant() const noexcept { return stagnant_; }
  void restore(double best, std::size_t stagnant) {
    best_ = best;
    stagnant_ = stagnant;
  }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stagnant_ = 0;
};

/// lr0 * final_factor^(step / total_steps).
[[nodiscard]] double exponential_lr(double lr0, double final_factor, std::size_t step, std::size_t total_steps);

}  // namespace poseforge
