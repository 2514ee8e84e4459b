#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poseforge/tensor.hpp"

namespace poseforge {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Entries probed per input tensor; larger tensors are subsampled.
  std::size_t max_entries = 24;
  /// Lower bound of the error denominator; keeps round-off on gradients that
  /// vanish analytically from reading as a large relative error.
  double abs_floor = 1e-6;
  std::uint64_t seed = 11;
};

/// Compares reverse-mode gradients of sum(w * f()) with central differences,
/// w a fixed random weighting of f's outputs. For each input the error is
/// |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf, abs_floor) over
/// the probed entries; the maximum over inputs is returned. Inputs must be
/// leaves that record gradients.
[[nodiscard]] double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                               const GradcheckOptions& opts = {});

struct GradcheckResult {
  std::string module;
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

struct GradcheckCase {
  std::string module;
  std::string name;
  std::function<double(const GradcheckOptions&)> run;
};

/// Every registered suite. Modules: tensor, backbone, poseformer,
/// semantic-field, losses, end-to-end.
[[nodiscard]] const std::vector<GradcheckCase>& gradcheck_registry();

/// Runs the cases of one module (all when `module` is empty). Throws
/// UsageError for an unknown module name.
[[nodiscard]] std::vector<GradcheckResult> run_gradchecks(const std::string& module = "",
                                                          const GradcheckOptions& opts = {});

[[nodiscard]] std::string format_gradcheck_table(const std::vector<GradcheckResult>& results);

}  // namespace poseforge
