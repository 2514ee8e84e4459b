#include "poseforge/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "poseforge/errors.hpp"
#include "poseforge/losses.hpp"
#include "poseforge/model.hpp"
#include "poseforge/ops.hpp"
#include "poseforge/semantic_field.hpp"

namespace poseforge {

double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, const GradcheckOptions& opts) {
  Rng rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (const auto& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) throw UsageError("gradcheck inputs must be leaves that record gradients");
  }

  const Tensor first = f();
  std::vector<double> w(first.numel());
  for (auto& v : w) v = unit(rng);
  const Tensor weights = Tensor::from_data(first.shape(), w);
  auto objective = [&]() {
    NoGradGuard no_grad;
    const Tensor out = f();
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * out[i];
    return acc;
  };

  for (auto t : inputs) t.zero_grad();
  sum(mul(first, weights)).backward();

  double worst = 0.0;
  for (auto t : inputs) {
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.numel(), 0.0);
    std::vector<std::size_t> entries(t.numel());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (entries.size() > opts.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries);
    }
    double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
    auto x = t.mutable_data();
    for (const std::size_t j : entries) {
      const double orig = x[j];
      x[j] = orig + opts.step;
      const double plus = objective();
      x[j] = orig - opts.step;
      const double minus = objective();
      x[j] = orig;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      diff = std::max(diff, std::abs(analytic[j] - numeric));
      scale_a = std::max(scale_a, std::abs(analytic[j]));
      scale_n = std::max(scale_n, std::abs(numeric));
    }
    worst = std::max(worst, diff / std::max({scale_a, scale_n, opts.abs_floor}));
  }
  for (auto t : inputs) t.zero_grad();
  return worst;
}

namespace {

Tensor random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Values bounded away from zero so relu-style kinks stay out of reach.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> d(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = sign(rng) ? d(rng) : -d(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Nonzero biases keep relu inputs off the kink at exactly zero, which a
// fully inactive layer would otherwise produce.
void jitter_biases(SemanticField& field, Rng& rng) {
  std::uniform_real_distribution<double> d(-0.2, 0.2);
  for (auto& p : field.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (auto& v : p.tensor.mutable_data()) v = d(rng);
    }
  }
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

RunConfig tiny_model_config() {
  RunConfig cfg;
  cfg.set("backbone.stage_channels", "4,6,8");
  cfg.set("backbone.proj_dim", "8");
  cfg.set("backbone.blocks_per_stage", "2");
  cfg.set("poseformer.attn_dim", "8");
  cfg.set("poseformer.heads", "2");
  cfg.set("poseformer.ffn", "true");
  cfg.set("poseformer.ffn_hidden", "8");
  cfg.set("poseformer.shared_dim", "8");
  cfg.set("poseformer.head_hidden", "8,6");
  cfg.set("poseformer.omega_previous_init", "0.5");
  return cfg;
}

// Nudges every fusion weight and positional scale off its initial value so
// each gradient path carries signal.
void perturb_scalars(PoseModel& model) {
  for (auto& a : model.former.attention) {
    if (a.omega_previous.defined()) a.omega_previous.mutable_data()[0] = 0.4;
    a.omega_current.mutable_data()[0] = 0.9;
  }
  for (auto& a : model.former.alpha) a.mutable_data()[0] = 0.7;
}

using Cases = std::vector<GradcheckCase>;

void add(Cases& cases, const char* module, const char* name, std::function<double(const GradcheckOptions&)> fn) {
  cases.push_back({module, name, std::move(fn)});
}

void tensor_cases(Cases& c) {
  const char* m = "tensor";
  add(c, m, "add/sub/mul/div broadcast", [](const GradcheckOptions& o) {
    Rng rng(1);
    Tensor a = random_param({2, 3, 4}, rng), b = random_param({4}, rng, 0.5, 1.5), s = random_param({1}, rng, 0.5, 1.5);
    return gradcheck([=] { return div(mul(add(a, b), sub(a, s)), add(b, s)); }, {a, b, s}, o);
  });
  add(c, m, "unary elementwise", [](const GradcheckOptions& o) {
    Rng rng(2);
    Tensor a = random_param({3, 5}, rng, 0.2, 1.5);
    return gradcheck([=] {
      return concat({exp(a), log(a), sqrt(a), sin(a), cos(a), square(a), softplus(a), sigmoid(a), neg(a),
                     add_scalar(mul_scalar(a, 3.0), 1.0)},
                    0);
    }, {a}, o);
  });
  add(c, m, "relu/relu6", [](const GradcheckOptions& o) {
    Rng rng(3);
    Tensor a = away_from_zero({4, 6}, rng);
    return gradcheck([=] { return concat({relu(a), relu6(mul_scalar(a, 7.0))}, 0); }, {a}, o);
  });
  add(c, m, "arccos_clamped / arccos_grad_clamped", [](const GradcheckOptions& o) {
    Rng rng(4);
    Tensor a = random_param({10}, rng, -0.9, 0.9);
    return gradcheck([=] { return concat({arccos_clamped(a), arccos_grad_clamped(a)}, 0); }, {a}, o);
  });
  add(c, m, "reductions", [](const GradcheckOptions& o) {
    Rng rng(5);
    Tensor a = random_param({3, 4, 5}, rng);
    return gradcheck([=] {
      return concat({reshape(sum(a), {1}), reshape(mean(a), {1}), reshape(sum_axis(a, 1), {15}),
                     reshape(mean_axis(a, 0), {20}), reshape(norm_l2(a), {12})},
                    0);
    }, {a}, o);
  });
  add(c, m, "reshape/transpose/concat/slice", [](const GradcheckOptions& o) {
    Rng rng(6);
    Tensor a = random_param({2, 3, 4}, rng), b = random_param({2, 3, 2}, rng);
    return gradcheck([=] { return slice(transpose_last2(concat({a, b}, 2)), 1, 1, 4); }, {a, b}, o);
  });
  add(c, m, "matmul 2d/3d/broadcast", [](const GradcheckOptions& o) {
    Rng rng(7);
    Tensor a = random_param({2, 3, 4}, rng), b = random_param({2, 4, 5}, rng), w = random_param({4, 2}, rng),
           x = random_param({3, 4}, rng);
    return gradcheck([=] {
      return concat({reshape(matmul(a, b), {30}), reshape(matmul(a, w), {12}), reshape(matmul(x, w), {6})}, 0);
    }, {a, b, w, x}, o);
  });
  add(c, m, "linear", [](const GradcheckOptions& o) {
    Rng rng(8);
    Tensor x = random_param({2, 3, 5}, rng), w = random_param({4, 5}, rng), b = random_param({4}, rng);
    return gradcheck([=] { return linear(x, w, b); }, {x, w, b}, o);
  });
  add(c, m, "softmax/log_softmax/gather", [](const GradcheckOptions& o) {
    Rng rng(9);
    Tensor a = random_param({4, 5}, rng, -2.0, 2.0);
    static const std::vector<std::size_t> idx{0, 3, 4, 1};
    return gradcheck([=] {
      return concat({reshape(softmax_rows(a), {20}), reshape(log_softmax_rows(a), {20}), gather_last(softmax_rows(a), idx)}, 0);
    }, {a}, o);
  });
  add(c, m, "conv2d stride 1/2", [](const GradcheckOptions& o) {
    Rng rng(10);
    Tensor x = random_param({2, 3, 6, 6}, rng), w = random_param({4, 3, 3, 3}, rng), b = random_param({4}, rng),
           w1 = random_param({2, 3, 1, 1}, rng);
    return gradcheck([=] {
      return concat({reshape(conv3x3(x, w, b, 1), {288}), reshape(conv3x3(x, w, b, 2), {72}),
                     reshape(conv1x1(x, w1, Tensor()), {144})},
                    0);
    }, {x, w, b, w1}, o);
  });
  add(c, m, "batchnorm train/eval", [](const GradcheckOptions& o) {
    Rng rng(11);
    Tensor x = random_param({3, 2, 3, 3}, rng), g = random_param({2}, rng, 0.5, 1.5), b = random_param({2}, rng);
    return gradcheck([=] {
      BatchNormStats train_stats = BatchNormStats::identity(2);
      BatchNormStats eval_stats = BatchNormStats::identity(2);
      eval_stats.batches_tracked.mutable_data()[0] = 1.0;
      eval_stats.running_var.mutable_data()[1] = 2.0;
      return concat({reshape(batchnorm(x, g, b, train_stats, Mode::train), {54}),
                     reshape(batchnorm(x, g, b, eval_stats, Mode::eval), {54})},
                    0);
    }, {x, g, b}, o);
  });
  add(c, m, "layer_norm", [](const GradcheckOptions& o) {
    Rng rng(12);
    Tensor x = random_param({3, 6}, rng), g = random_param({6}, rng), b = random_param({6}, rng);
    return gradcheck([=] { return layer_norm(x, g, b); }, {x, g, b}, o);
  });
  add(c, m, "bilinear resize", [](const GradcheckOptions& o) {
    Rng rng(13);
    Tensor x = random_param({2, 3, 4}, rng);
    return gradcheck([=] { return concat({reshape(bilinear_resize(x, 5, 7), {70}), reshape(bilinear_upsample2x(x), {96})}, 0); },
                     {x}, o);
  });
}

void backbone_cases(Cases& c) {
  add(c, "backbone", "extract (train mode)", [](const GradcheckOptions& o) {
    Rng rng(20);
    BackboneConfig cfg;
    cfg.stage_channels = {4, 6, 8};
    cfg.proj_dim = 5;
    auto bb = std::make_shared<Backbone>(cfg, rng);
    Tensor img = random_param({2, 3, 32, 32}, rng, 0.0, 1.0);
    auto inputs = tensors_of(bb->trainable_parameters());
    inputs.push_back(img);
    return gradcheck([=] {
      const auto f = bb->extract(img, Mode::train);
      return concat({reshape(f.f1, {f.f1.numel()}), reshape(f.f2, {f.f2.numel()}), reshape(f.f3, {f.f3.numel()})}, 0);
    }, inputs, o);
  });
}

void poseformer_cases(Cases& c) {
  const char* m = "poseformer";
  add(c, m, "resize_attention", [](const GradcheckOptions& o) {
    Rng rng(30);
    Tensor a = random_param({2, 6, 6}, rng);
    return gradcheck([=] { return resize_attention(a, {2, 3}, {4, 6}); }, {a}, o);
  });
  add(c, m, "cross-scale attention", [](const GradcheckOptions& o) {
    Rng rng(31);
    PoseFormerConfig cfg;
    cfg.dim = 6;
    cfg.attn_dim = 4;
    cfg.heads = 2;
    auto attn = std::make_shared<CrossScaleAttention>(cfg, true, rng);
    attn->omega_previous.mutable_data()[0] = 0.6;
    Tensor tokens = random_param({2, 8, 6}, rng);
    Tensor prev0 = random_param({2, 2, 2}, rng), prev1 = random_param({2, 2, 2}, rng);
    ParamList params;
    attn->collect(params, "attn");
    auto inputs = tensors_of(params);
    inputs.insert(inputs.end(), {tokens, prev0, prev1});
    return gradcheck([=] {
      const std::vector<Tensor> prev{prev0, prev1};
      const auto r = attn->forward(tokens, {2, 4}, &prev, {1, 2});
      return concat({reshape(r.out, {96}), reshape(r.raw[0], {128}), reshape(r.raw[1], {128})}, 0);
    }, inputs, o);
  });
  add(c, m, "positional encoding", [](const GradcheckOptions& o) {
    Rng rng(32);
    Tensor f = random_param({2, 4, 3, 2}, rng), alpha = random_param({1}, rng, 0.5, 1.5);
    return gradcheck([=] { return positional_encode(f, alpha); }, {f, alpha}, o);
  });
  add(c, m, "upsample block", [](const GradcheckOptions& o) {
    Rng rng(33);
    auto up = std::make_shared<UpsampleBlock>(3, rng);
    Tensor g = random_param({2, 3, 2, 3}, rng);
    ParamList params;
    up->collect(params, "up");
    auto inputs = tensors_of(trainable(params));
    inputs.push_back(g);
    return gradcheck([=] { return up->forward(g, Mode::train); }, inputs, o);
  });
  add(c, m, "feed-forward", [](const GradcheckOptions& o) {
    Rng rng(34);
    auto ffn = std::make_shared<FeedForward>(5, 7, rng);
    Tensor t = random_param({2, 3, 5}, rng);
    ParamList params;
    ffn->collect(params, "ffn");
    auto inputs = tensors_of(params);
    inputs.push_back(t);
    return gradcheck([=] { return ffn->forward(t); }, inputs, o);
  });
  add(c, m, "full transformer", [](const GradcheckOptions& o) {
    Rng rng(35);
    auto model = std::make_shared<PoseModel>(tiny_model_config(), rng);
    perturb_scalars(*model);
    MultiScaleFeatures feats{random_param({2, 8, 4, 4}, rng), random_param({2, 8, 2, 2}, rng),
                             random_param({2, 8, 1, 1}, rng)};
    auto inputs = tensors_of(trainable(model->former.parameters()));
    inputs.insert(inputs.end(), {feats.f1, feats.f2, feats.f3});
    return gradcheck([=] {
      const auto out = model->former.forward(feats, Mode::train);
      return concat({reshape(out.translation, {6}), reshape(out.rotation, {8})}, 0);
    }, inputs, o);
  });
}

// Closed-form field used to exercise rendering without an MLP in the way.
class QuadraticField final : public SceneField {
 public:
  [[nodiscard]] FieldOutput evaluate(const Tensor& p) const override {
    const std::size_t P = p.dim(0);
    const Tensor r2 = sum_axis(square(p), 1);
    return {softplus(add_scalar(neg(r2), 1.0)), concat({reshape(r2, {P, 1}), sin(p)}, 1), sigmoid(p)};
  }
  [[nodiscard]] std::size_t num_classes() const override { return 4; }
};

void field_cases(Cases& c) {
  const char* m = "semantic-field";
  add(c, m, "frequency_encode", [](const GradcheckOptions& o) {
    Rng rng(40);
    Tensor p = random_param({5, 3}, rng);
    return gradcheck([=] { return frequency_encode(p, 3); }, {p}, o);
  });
  add(c, m, "ray_points", [](const GradcheckOptions& o) {
    Rng rng(41);
    Tensor org = random_param({3, 3}, rng), dir = random_param({3, 3}, rng);
    static const std::vector<double> t{0.5, 1.0, 2.0, 0.3, 0.9, 1.4, 0.2, 0.4, 3.0};
    return gradcheck([=] { return ray_points(org, dir, t, 3); }, {org, dir}, o);
  });
  add(c, m, "volume_render", [](const GradcheckOptions& o) {
    Rng rng(42);
    Tensor sigma = random_param({3, 5}, rng, 0.0, 3.0), values = random_param({3, 5, 4}, rng);
    std::vector<double> delta(15);
    std::uniform_real_distribution<double> d(0.05, 0.6);
    for (auto& v : delta) v = d(rng);
    return gradcheck([=] { return volume_render(sigma, values, delta).integrated; }, {sigma, values}, o);
  });
  add(c, m, "field MLP", [](const GradcheckOptions& o) {
    Rng rng(43);
    auto field = std::make_shared<SemanticField>(SemanticFieldConfig{3, 2, 8, 2}, rng);
    jitter_biases(*field, rng);
    Tensor p = random_param({6, 3}, rng);
    auto inputs = tensors_of(field->parameters());
    inputs.push_back(p);
    return gradcheck([=] {
      const auto f = field->evaluate(p);
      return concat({reshape(f.sigma, {6, 1}), f.logits, f.rgb}, 1);
    }, inputs, o);
  });
  add(c, m, "quaternion to matrix / normalize", [](const GradcheckOptions& o) {
    Rng rng(44);
    Tensor q = random_param({4}, rng, 0.2, 1.0), qb = random_param({3, 4}, rng);
    return gradcheck([=] {
      return concat({reshape(quat_to_rotmat(normalize_quaternion(q)), {9}), reshape(normalize_quaternion(qb), {12})}, 0);
    }, {q, qb}, o);
  });
  add(c, m, "render from pose (origins and directions)", [](const GradcheckOptions& o) {
    Rng rng(45);
    auto field = std::make_shared<QuadraticField>();
    Tensor t = Tensor::parameter({3}, {0.1, -0.2, -1.5});
    Tensor q = Tensor::parameter({4}, {0.95, 0.1, -0.2, 0.05});
    const Intrinsics k{8.0, 8.0, 4.0, 4.0, 8, 8};
    return gradcheck([=] {
      const RayBatch rays = rays_from_pose(k, 3, t, normalize_quaternion(q), 0.5, 3.0, 6);
      const auto r = render_rays(*field, rays, Mode::eval);
      return concat({r.logits, r.rgb}, 1);
    }, {t, q}, o);
  });
}

void loss_cases(Cases& c) {
  const char* m = "losses";
  add(c, m, "pose loss", [](const GradcheckOptions& o) {
    Rng rng(50);
    Tensor px = random_param({3, 3}, rng), pq = random_param({3, 4}, rng, 0.2, 1.0);
    const Tensor gx = random_param({3, 3}, rng).detach();
    std::vector<double> q{1, 0, 0, 0, 0.6, 0.8, 0, 0, 0.5, 0.5, 0.5, 0.5};
    const Tensor gq = Tensor::from_data({3, 4}, q);
    auto state = std::make_shared<PoseLossState>(0.3, -1.0);
    return gradcheck([=] { return pose_loss(px, pq, gx, gq, *state).total; }, {px, pq, state->s_x, state->s_q}, o);
  });
  add(c, m, "cross-entropy / SAM / combined", [](const GradcheckOptions& o) {
    Rng rng(51);
    Tensor logits = random_param({3, 2, 3}, rng, -2.0, 2.0);
    static const std::vector<std::size_t> labels{0, 2, 1, 1, 0, 2};
    return gradcheck([=] {
      return concat({reshape(semantic_ce(logits, labels), {1}), reshape(sam_loss(logits, labels), {1}),
                     reshape(semantic_loss(logits, labels), {1})},
                    0);
    }, {logits}, o);
  });
}

void end_to_end_cases(Cases& c) {
  const char* m = "end-to-end";
  add(c, m, "pose objective (image to loss)", [](const GradcheckOptions& o) {
    Rng rng(60);
    auto model = std::make_shared<PoseModel>(tiny_model_config(), rng);
    perturb_scalars(*model);
    // Four images: with two, batch norm over a 1x1 grid reduces every
    // activation to +-1 and the deepest conv loses its gradient.
    Tensor img = random_param({4, 3, 32, 32}, rng, 0.0, 1.0);
    const Tensor gx = random_param({4, 3}, rng).detach();
    const Tensor gq = Tensor::from_data({4, 4}, {1, 0, 0, 0, 0.5, 0.5, 0.5, 0.5, 0, 0.6, 0, 0.8, 0.1, 0.7, -0.7, 0.1});
    auto inputs = tensors_of(model->trainable_parameters());
    inputs.push_back(img);
    return gradcheck([=] {
      const auto out = model->forward(img, Mode::train);
      return total_loss(pose_loss(out.translation, out.rotation, gx, gq, model->loss_state).total, Tensor(), 1.0, 0.0);
    }, inputs, o);
  });
  add(c, m, "semantic objective (image to rendered loss)", [](const GradcheckOptions& o) {
    Rng rng(61);
    auto model = std::make_shared<PoseModel>(tiny_model_config(), rng);
    perturb_scalars(*model);
    auto field = std::make_shared<SemanticField>(SemanticFieldConfig{3, 2, 8, 2}, rng);
    jitter_biases(*field, rng);
    // Offset the predicted camera so its rays cross the field's support.
    model->former.translation_head.back().bias.mutable_data()[2] = -1.5;
    Tensor img = random_param({2, 3, 32, 32}, rng, 0.0, 1.0);
    const Intrinsics k{30.0, 30.0, 16.0, 16.0, 32, 32};
    static const std::vector<std::size_t> labels{0, 1, 2, 1, 2, 0, 1, 1, 2, 0, 0, 2, 1, 0, 2, 1};
    auto inputs = tensors_of(model->trainable_parameters());
    for (auto& t : tensors_of(field->parameters())) inputs.push_back(t);
    inputs.push_back(img);
    return gradcheck([=] {
      const auto out = model->forward(img, Mode::train);
      Tensor acc;
      for (std::size_t b = 0; b < 2; ++b) {
        const Tensor t = reshape(slice(out.translation, 0, b, 1), {3});
        const Tensor q = reshape(normalize_quaternion(slice(out.rotation, 0, b, 1)), {4});
        const auto r = render_rays(*field, rays_from_pose(k, 8, t, q, 0.2, 3.0, 5), Mode::eval);
        const Tensor l = semantic_loss_rows(r.logits, labels, 0.7, 0.3);
        acc = acc.defined() ? add(acc, l) : l;
      }
      return total_loss(Tensor(), mul_scalar(acc, 0.5), 0.0, 1.0);
    }, inputs, o);
  });
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_registry() {
  static const std::vector<GradcheckCase> cases = [] {
    Cases c;
    tensor_cases(c);
    backbone_cases(c);
    poseformer_cases(c);
    field_cases(c);
    loss_cases(c);
    end_to_end_cases(c);
    return c;
  }();
  return cases;
}

std::vector<GradcheckResult> run_gradchecks(const std::string& module, const GradcheckOptions& opts) {
  const auto& all = gradcheck_registry();
  if (!module.empty() &&
      std::none_of(all.begin(), all.end(), [&](const GradcheckCase& c) { return c.module == module; })) {
    std::string known;
    for (const auto& c : all) {
      if (known.find(c.module) == std::string::npos) known += (known.empty() ? "" : ", ") + c.module;
    }
    throw UsageError("unknown gradcheck module '" + module + "' (known: " + known + ")");
  }
  std::vector<GradcheckResult> out;
  for (const auto& c : all) {
    if (!module.empty() && c.module != module) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const double err = c.run(opts);
    const auto t1 = std::chrono::steady_clock::now();
    out.push_back({c.module, c.name, err, std::isfinite(err) && err < opts.tolerance,
                   std::chrono::duration<double>(t1 - t0).count()});
  }
  return out;
}

std::string format_gradcheck_table(const std::vector<GradcheckResult>& results) {
  std::string out = "module          check                                         max rel err   status\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-15s %-45s %12.3e   %s\n", r.module.c_str(), r.name.c_str(), r.max_rel_error,
                  r.passed ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace poseforge
