#include "poseforge/backbone.hpp"

#include <string>

#include "poseforge/errors.hpp"

namespace poseforge {

namespace {

std::string nearest_valid(std::size_t n) {
  const std::size_t below = (n / 32) * 32;
  const std::size_t above = below + 32;
  if (below == 0) return std::to_string(above);
  return std::to_string(below) + " or " + std::to_string(above);
}

}  // namespace

void check_input_resolution(std::size_t height, std::size_t width) {
  std::string problems;
  for (auto [label, n] : {std::pair{"height", height}, std::pair{"width", width}}) {
    if (n < 32 || n % 32 != 0) {
      if (!problems.empty()) problems += "; ";
      problems += std::string(label) + " " + std::to_string(n) +
                  " is not a positive multiple of 32 (nearest valid: " + nearest_valid(n) + ")";
    }
  }
  if (!problems.empty()) throw ConfigError("input resolution rejected: " + problems);
}

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.blocks_per_stage == 0) throw ConfigError("backbone.blocks_per_stage must be at least 1");
  if (cfg.proj_dim == 0) throw ConfigError("backbone.proj_dim must be positive");
  const std::size_t c1 = cfg.stage_channels[0];
  stem_.emplace_back(cfg.in_channels, c1, 3, 2, rng);
  stem_.emplace_back(c1, c1, 3, 2, rng);
  std::size_t in = c1;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t out = cfg.stage_channels[s];
    stages_[s].emplace_back(in, out, 3, 2, rng);
    for (std::size_t b = 1; b < cfg.blocks_per_stage; ++b) stages_[s].emplace_back(out, out, 1, 1, rng);
    in = out;
  }
  for (std::size_t s = 0; s < 3; ++s) {
    projections_[s] = Conv2d(cfg.stage_channels[s], cfg.proj_dim, 1, 1, rng, true);
  }
}

MultiScaleFeatures Backbone::extract(const Tensor& images, Mode mode) {
  const auto& shape = images.shape();
  if (shape.size() != 3 && shape.size() != 4) {
    throw DimensionError("backbone expects [B,3,H,W] or [3,H,W], got " + to_string(shape));
  }
  const std::size_t channels = shape[shape.size() - 3];
  if (channels != cfg_.in_channels) {
    throw DimensionError("backbone expects " + std::to_string(cfg_.in_channels) +
                         " input channels, got " + to_string(shape));
  }
  check_input_resolution(shape[shape.size() - 2], shape[shape.size() - 1]);

  Tensor x = images;
  for (auto& block : stem_) x = block.forward(x, mode);
  std::array<Tensor, 3> outs;
  for (std::size_t s = 0; s < 3; ++s) {
    for (auto& block : stages_[s]) x = block.forward(x, mode);
    outs[s] = projections_[s].forward(x);
  }
  return {outs[0], outs[1], outs[2]};
}

ParamList Backbone::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].collect(out, "backbone.stem" + std::to_string(i));
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(out, "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
    }
  }
  for (std::size_t s = 0; s < 3; ++s) projections_[s].collect(out, "backbone.proj" + std::to_string(s + 1));
  return out;
}

ParamList Backbone::trainable_parameters() const {
  ParamList out;
  for (auto& p : parameters()) {
    if (p.role == ParamRole::buffer) continue;
    if (policy_ == FreezePolicy::freeze_all_but_bn && p.role != ParamRole::batchnorm) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace poseforge
