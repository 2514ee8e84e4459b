#include "poseforge/poseformer.hpp"

#include <cmath>
#include <string>

#include "poseforge/errors.hpp"

namespace poseforge {

Tensor grid_to_tokens(const Tensor& grid) {
  const auto& s = grid.shape();
  if (s.size() == 3) return grid_to_tokens(reshape(grid, {1, s[0], s[1], s[2]}));
  if (s.size() != 4) throw DimensionError("grid_to_tokens expects [B,d,H,W], got " + to_string(s));
  return transpose_last2(reshape(grid, {s[0], s[1], s[2] * s[3]}));
}

Tensor tokens_to_grid(const Tensor& tokens, GridSize grid) {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[1] != grid.tokens()) {
    throw DimensionError("tokens_to_grid: " + to_string(s) + " does not hold a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  return reshape(transpose_last2(tokens), {s[0], s[2], grid.height, grid.width});
}

Tensor resize_attention(const Tensor& attention, GridSize from, GridSize to) {
  if (from.height == to.height && from.width == to.width) return attention;
  const auto ry = interpolation_matrix(from.height, to.height);
  const auto rx = interpolation_matrix(from.width, to.width);
  const std::size_t n_from = from.tokens();
  const std::size_t n_to = to.tokens();
  std::vector<double> r(n_to * n_from);
  for (std::size_t y = 0; y < to.height; ++y)
    for (std::size_t x = 0; x < to.width; ++x)
      for (std::size_t yp = 0; yp < from.height; ++yp)
        for (std::size_t xp = 0; xp < from.width; ++xp)
          r[(y * to.width + x) * n_from + yp * from.width + xp] =
              ry[y * from.height + yp] * rx[x * from.width + xp];
  const Tensor resample = Tensor::from_data({n_to, n_from}, std::move(r));
  return matmul(matmul(resample, attention), transpose_last2(resample));
}

CrossScaleAttention::CrossScaleAttention(const PoseFormerConfig& cfg, bool has_previous, Rng& rng)
    : proj_q(cfg.dim, cfg.attn_dim, rng),
      proj_k(cfg.dim, cfg.attn_dim, rng, false),
      proj_v(cfg.dim, cfg.dim, rng),
      omega_current(trainable_scalar(cfg.omega_current_init)),
      heads(cfg.heads) {
  if (has_previous) omega_previous = trainable_scalar(cfg.omega_previous_init);
}

namespace {

struct HeadViews {
  Tensor q, k, v;
  std::size_t key_width;
};

HeadViews head_views(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                     std::size_t h) {
  const std::size_t dk = q.dim(2) / heads;
  const std::size_t dv = v.dim(2) / heads;
  if (heads == 1) return {q, k, v, dk};
  return {slice(q, 2, h * dk, dk), slice(k, 2, h * dk, dk), slice(v, 2, h * dv, dv), dk};
}

Tensor scaled_scores(const HeadViews& hv) {
  return mul_scalar(matmul(hv.q, transpose_last2(hv.k)), 1.0 / std::sqrt(static_cast<double>(hv.key_width)));
}

void check_tokens(const CrossScaleAttention& attn, const Tensor& tokens) {
  if (tokens.rank() != 3 || tokens.dim(2) != attn.proj_q.weight.dim(1)) {
    throw ConfigError("cross-scale attention expects tokens of width " +
                      std::to_string(attn.proj_q.weight.dim(1)) + ", got " + to_string(tokens.shape()));
  }
}

}  // namespace

AttentionResult CrossScaleAttention::forward(const Tensor& tokens, GridSize grid,
                                             const std::vector<Tensor>* previous,
                                             GridSize previous_grid) const {
  check_tokens(*this, tokens);
  if (tokens.dim(1) != grid.tokens()) {
    throw DimensionError("attention tokens " + to_string(tokens.shape()) + " do not match grid " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  if (previous && previous->size() != heads) {
    throw ConfigError("previous-scale attention carries " + std::to_string(previous->size()) +
                      " heads, expected " + std::to_string(heads));
  }
  const Tensor q = proj_q.forward(tokens);
  const Tensor k = proj_k.forward(tokens);
  const Tensor v = proj_v.forward(tokens);
  AttentionResult result;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto hv = head_views(q, k, v, heads, h);
    Tensor raw = scaled_scores(hv);
    Tensor fused = mul(raw, omega_current);
    if (previous && omega_previous.defined()) {
      fused = add(fused, mul(resize_attention((*previous)[h], previous_grid, grid), omega_previous));
    }
    outs.push_back(matmul(softmax_rows(fused), hv.v));
    result.raw.push_back(std::move(raw));
  }
  result.out = heads == 1 ? outs.front() : concat(outs, 2);
  return result;
}

void CrossScaleAttention::collect(ParamList& out, const std::string& prefix) const {
  proj_q.collect(out, prefix + ".q");
  proj_k.collect(out, prefix + ".k");
  proj_v.collect(out, prefix + ".v");
  out.push_back({prefix + ".omega_current", omega_current, ParamRole::weight});
  if (omega_previous.defined()) out.push_back({prefix + ".omega_previous", omega_previous, ParamRole::weight});
}

Tensor single_scale_attention(const CrossScaleAttention& attn, const Tensor& tokens) {
  check_tokens(attn, tokens);
  const Tensor q = attn.proj_q.forward(tokens);
  const Tensor k = attn.proj_k.forward(tokens);
  const Tensor v = attn.proj_v.forward(tokens);
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < attn.heads; ++h) {
    const auto hv = head_views(q, k, v, attn.heads, h);
    outs.push_back(matmul(softmax_rows(mul(scaled_scores(hv), attn.omega_current)), hv.v));
  }
  return attn.heads == 1 ? outs.front() : concat(outs, 2);
}

Tensor positional_table(std::size_t channels, GridSize grid) {
  if (channels % 2 != 0) {
    throw ConfigError("positional encoding needs an even channel count, got " + std::to_string(channels));
  }
  const std::size_t half = channels / 2;
  const double d = static_cast<double>(channels);
  std::vector<double> table(channels * grid.tokens());
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const bool rows = ch < half;
    const std::size_t c = rows ? ch : ch - half;
    const double denom = std::pow(10000.0, 2.0 * static_cast<double>(c) / d);
    for (std::size_t y = 0; y < grid.height; ++y)
      for (std::size_t x = 0; x < grid.width; ++x) {
        const double angle = static_cast<double>(rows ? y : x) / denom;
        table[(ch * grid.height + y) * grid.width + x] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
  }
  return Tensor::from_data({channels, grid.height, grid.width}, std::move(table));
}

Tensor positional_encode(const Tensor& features, const Tensor& alpha) {
  const auto& s = features.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("positional_encode expects [B,d,H,W] or [d,H,W], got " + to_string(s));
  }
  const std::size_t d = s[s.size() - 3];
  const Tensor table = positional_table(d, {s[s.size() - 2], s[s.size() - 1]});
  return add(features, mul(table, alpha));
}

UpsampleBlock::UpsampleBlock(std::size_t channels, Rng& rng) : conv(channels, channels, 3, 1, rng, false), bn(channels) {}

Tensor UpsampleBlock::forward(const Tensor& grid, Mode mode) {
  return relu(bn.forward(conv.forward(bilinear_upsample2x(grid)), mode));
}

void UpsampleBlock::collect(ParamList& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  bn.collect(out, prefix + ".bn");
}

FeedForward::FeedForward(std::size_t dim, std::size_t hidden, Rng& rng)
    : ln_gamma(Tensor::parameter({dim}, std::vector<double>(dim, 1.0))),
      ln_beta(Tensor::parameter({dim}, std::vector<double>(dim, 0.0))),
      fc1(dim, hidden, rng),
      fc2(hidden, dim, rng) {}

Tensor FeedForward::forward(const Tensor& tokens) const {
  return add(tokens, fc2.forward(relu(fc1.forward(layer_norm(tokens, ln_gamma, ln_beta)))));
}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".ln_gamma", ln_gamma, ParamRole::weight});
  out.push_back({prefix + ".ln_beta", ln_beta, ParamRole::weight});
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

namespace {

std::vector<Linear> make_head(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  std::vector<Linear> layers;
  for (std::size_t width : hidden) {
    layers.emplace_back(in, width, rng);
    in = width;
  }
  layers.emplace_back(in, out, rng);
  return layers;
}

Tensor run_head(const std::vector<Linear>& layers, Tensor x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = relu(x);
  }
  return x;
}

const char* scale_name(std::size_t index) {
  static constexpr const char* names[] = {"scale32", "scale16", "scale8"};
  return names[index];
}

}  // namespace

PoseFormer::PoseFormer(const PoseFormerConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.attn_dim % cfg.heads != 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError("poseformer.heads must divide both poseformer.dim and poseformer.attn_dim");
  }
  if (cfg.dim % 2 != 0) throw ConfigError("poseformer.dim must be even for positional encoding");
  for (std::size_t i = 0; i < 3; ++i) {
    attention[i] = CrossScaleAttention(cfg, i > 0, rng);
    alpha[i] = trainable_scalar(cfg.alpha_init);
    if (cfg.ffn) ffn[i] = FeedForward(cfg.dim, cfg.ffn_hidden, rng);
  }
  for (auto& block : upsample) block = UpsampleBlock(cfg.dim, rng);
  shared = Linear(cfg.dim, cfg.shared_dim, rng);
  translation_head = make_head(cfg.shared_dim, cfg.head_hidden, 3, rng);
  rotation_head = make_head(cfg.shared_dim, cfg.head_hidden, 4, rng);
}

PoseFormerOutput PoseFormer::forward(const MultiScaleFeatures& features, Mode mode) {
  const std::array<const Tensor*, 3> maps{&features.f3, &features.f2, &features.f1};
  for (const Tensor* m : maps) {
    if (m->rank() != 4 || m->dim(1) != cfg_.dim) {
      throw ConfigError("poseformer expects feature maps [B," + std::to_string(cfg_.dim) +
                        ",H,W], got " + to_string(m->shape()));
    }
  }
  PoseFormerOutput out;
  Tensor previous_tokens;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& f = *maps[i];
    const GridSize grid{f.dim(2), f.dim(3)};
    Tensor fused = f;
    if (i > 0) {
      const GridSize prev = out.scales[i - 1].grid;
      if (grid.height != 2 * prev.height || grid.width != 2 * prev.width) {
        throw DimensionError("feature map " + to_string(f.shape()) + " is not twice the coarser scale");
      }
      fused = add(f, upsample[i - 1].forward(tokens_to_grid(previous_tokens, prev), mode));
    }
    Tensor tokens = grid_to_tokens(positional_encode(fused, alpha[i]));
    const std::vector<Tensor>* prev_raw = i > 0 ? &out.scales[i - 1].raw_attention : nullptr;
    const GridSize prev_grid = i > 0 ? out.scales[i - 1].grid : GridSize{};
    auto attn = attention[i].forward(tokens, grid, prev_raw, prev_grid);
    Tensor result = cfg_.ffn ? ffn[i].forward(attn.out) : attn.out;
    out.scales[i] = ScaleTrace{grid, tokens, result, std::move(attn.raw)};
    previous_tokens = result;
  }
  const Tensor pooled = mean_axis(previous_tokens, 1);
  const Tensor hidden = relu(shared.forward(pooled));
  out.translation = run_head(translation_head, hidden);
  out.rotation = run_head(rotation_head, hidden);
  return out;
}

ParamList PoseFormer::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string prefix = std::string("poseformer.") + scale_name(i);
    attention[i].collect(out, prefix + ".attn");
    out.push_back({prefix + ".alpha", alpha[i], ParamRole::weight});
    if (cfg_.ffn) ffn[i].collect(out, prefix + ".ffn");
  }
  for (std::size_t i = 0; i < upsample.size(); ++i) {
    upsample[i].collect(out, "poseformer.upsample" + std::to_string(i));
  }
  shared.collect(out, "poseformer.shared");
  for (std::size_t i = 0; i < translation_head.size(); ++i) {
    translation_head[i].collect(out, "poseformer.translation" + std::to_string(i));
  }
  for (std::size_t i = 0; i < rotation_head.size(); ++i) {
    rotation_head[i].collect(out, "poseformer.rotation" + std::to_string(i));
  }
  return out;
}

}  // namespace poseforge
