#include "poseforge/nn.hpp"

#include <cmath>

namespace poseforge {

ParamList trainable(const ParamList& params) {
  ParamList out;
  for (const auto& p : params) {
    if (p.role != ParamRole::buffer) out.push_back(p);
  }
  return out;
}

Tensor trainable_scalar(double value) { return Tensor::parameter({1}, {value}); }

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  weight = Tensor::parameter({out, in}, std::move(w));
  if (with_bias) bias = Tensor::parameter({out}, std::vector<double>(out, 0.0));
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, ParamRole::weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, ParamRole::weight});
}

void Linear::zero() {
  for (auto& v : weight.mutable_data()) v = 0.0;
  if (bias.defined()) {
    for (auto& v : bias.mutable_data()) v = 0.0;
  }
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, Rng& rng,
               bool with_bias)
    : stride(stride_) {
  // He-normal for relu-family activations.
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  std::normal_distribution<double> dist(0.0, std_dev);
  std::vector<double> w(out * in * kernel * kernel);
  for (auto& v : w) v = dist(rng);
  weight = Tensor::parameter({out, in, kernel, kernel}, std::move(w));
  if (with_bias) bias = Tensor::parameter({out}, std::vector<double>(out, 0.0));
}

Tensor Conv2d::forward(const Tensor& x) const {
  const std::size_t k = weight.dim(2);
  return conv2d(x, weight, bias, stride, k / 2);
}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, ParamRole::weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, ParamRole::weight});
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::parameter({channels}, std::vector<double>(channels, 1.0))),
      beta(Tensor::parameter({channels}, std::vector<double>(channels, 0.0))),
      stats(BatchNormStats::identity(channels)) {}

void BatchNorm2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma, ParamRole::batchnorm});
  out.push_back({prefix + ".beta", beta, ParamRole::batchnorm});
  out.push_back({prefix + ".running_mean", stats.running_mean, ParamRole::buffer});
  out.push_back({prefix + ".running_var", stats.running_var, ParamRole::buffer});
  out.push_back({prefix + ".batches_tracked", stats.batches_tracked, ParamRole::buffer});
}

ConvBnAct::ConvBnAct(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng)
    : conv(in, out, kernel, stride, rng, false), bn(out) {}

Tensor ConvBnAct::forward(const Tensor& x, Mode mode) { return relu6(bn.forward(conv.forward(x), mode)); }

void ConvBnAct::collect(ParamList& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  bn.collect(out, prefix + ".bn");
}

}  // namespace poseforge
