#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "poseforge/ops.hpp"

namespace poseforge {

using Rng = std::mt19937_64;

/// What an optimizer may do with a named tensor.
enum class ParamRole {
  weight,     // convolution / linear weights and biases, scalars
  batchnorm,  // batch-norm scale and shift
  buffer,     // running statistics; never touched by an optimizer
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamRole role = ParamRole::weight;
};

using ParamList = std::vector<NamedTensor>;

/// Only the entries an optimizer updates (weights and batch-norm affine).
[[nodiscard]] ParamList trainable(const ParamList& params);

[[nodiscard]] Tensor trainable_scalar(double value);

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  [[nodiscard]] Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
  /// Zeroes weight and bias.
  void zero();

  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng,
         bool with_bias = true);

  [[nodiscard]] Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor weight;  // [out, in, k, k]
  Tensor bias;
  std::size_t stride = 1;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  [[nodiscard]] Tensor forward(const Tensor& x, Mode mode) { return batchnorm(x, gamma, beta, stats, mode); }
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

/// Conv, batch norm, then relu6.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

  [[nodiscard]] Tensor forward(const Tensor& x, Mode mode);
  void collect(ParamList& out, const std::string& prefix) const;

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace poseforge
