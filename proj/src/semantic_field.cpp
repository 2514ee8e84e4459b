#include "poseforge/semantic_field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <string>
#include <thread>

#include "op_support.hpp"
#include "poseforge/errors.hpp"

namespace poseforge {

using detail::grad_of;

Tensor frequency_encode(const Tensor& points, std::size_t bands) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("frequency_encode expects [P,3], got " + to_string(points.shape()));
  }
  const std::size_t P = points.dim(0);
  const std::size_t width = 6 * bands + 3;
  const auto& pv = points.values();
  std::vector<double> out(P * width);
  for (std::size_t p = 0; p < P; ++p) {
    double* row = out.data() + p * width;
    for (std::size_t k = 0; k < bands; ++k) {
      const double freq = std::ldexp(std::numbers::pi, static_cast<int>(k));
      for (std::size_t c = 0; c < 3; ++c) {
        row[6 * k + c] = std::sin(freq * pv[p * 3 + c]);
        row[6 * k + 3 + c] = std::cos(freq * pv[p * 3 + c]);
      }
    }
    for (std::size_t c = 0; c < 3; ++c) row[6 * bands + c] = pv[p * 3 + c];
  }
  return Tensor::make_result("frequency_encode", {P, width}, std::move(out), {points},
                             [points, bands, P, width](const detail::Node& self) {
                               auto gp = grad_of(points);
                               for (std::size_t p = 0; p < P; ++p) {
                                 const double* g = self.grad.data() + p * width;
                                 const double* y = self.value.data() + p * width;
                                 for (std::size_t k = 0; k < bands; ++k) {
                                   const double freq = std::ldexp(std::numbers::pi, static_cast<int>(k));
                                   for (std::size_t c = 0; c < 3; ++c) {
                                     gp[p * 3 + c] += freq * (g[6 * k + c] * y[6 * k + 3 + c] -
                                                              g[6 * k + 3 + c] * y[6 * k + c]);
                                   }
                                 }
                                 for (std::size_t c = 0; c < 3; ++c) gp[p * 3 + c] += g[6 * bands + c];
                               }
                             });
}

SemanticField::SemanticField(const SemanticFieldConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.classes < 2) throw ConfigError("field.classes must be at least 2");
  if (cfg.depth == 0 || cfg.width == 0) throw ConfigError("field.depth and field.width must be positive");
  std::size_t in = 6 * cfg.freq_bands + 3;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    trunk.emplace_back(in, cfg.width, rng);
    in = cfg.width;
  }
  sigma_head = Linear(cfg.width, 1, rng);
  semantic_head = Linear(cfg.width, cfg.classes, rng);
  rgb_head = Linear(cfg.width, 3, rng);
}

FieldOutput SemanticField::evaluate(const Tensor& points) const {
  Tensor h = frequency_encode(points, cfg_.freq_bands);
  for (const auto& layer : trunk) h = relu(layer.forward(h));
  const std::size_t P = points.dim(0);
  return FieldOutput{
      softplus(reshape(sigma_head.forward(h), {P})),
      semantic_head.forward(h),
      sigmoid(rgb_head.forward(h)),
  };
}

void SemanticField::zero_heads() {
  sigma_head.zero();
  semantic_head.zero();
  rgb_head.zero();
}

ParamList SemanticField::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < trunk.size(); ++i) trunk[i].collect(out, "field.trunk" + std::to_string(i));
  sigma_head.collect(out, "field.sigma");
  semantic_head.collect(out, "field.semantic");
  rgb_head.collect(out, "field.rgb");
  return out;
}

void SemanticField::set_trainable(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (width == 0 || height == 0) throw ConfigError("camera resolution must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw ConfigError("camera principal point lies outside the image");
  }
}

Tensor camera_directions(const Intrinsics& k, std::size_t stride) {
  k.validate();
  if (stride == 0) throw ConfigError("render stride must be at least 1");
  const std::size_t w = k.strided_width(stride);
  const std::size_t h = k.strided_height(stride);
  std::vector<double> dirs(w * h * 3);
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t i = 0; i < w; ++i) {
      const double u = static_cast<double>(i * stride);
      const double v = static_cast<double>(j * stride);
      Eigen::Vector3d d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      d.normalize();
      std::copy_n(d.data(), 3, dirs.begin() + static_cast<std::ptrdiff_t>((j * w + i) * 3));
    }
  return Tensor::from_data({w * h, 3}, std::move(dirs));
}

RayBatch generate_rays(const Camera& camera, double near, double far, std::size_t samples, std::size_t stride) {
  const Tensor local = camera_directions(camera.intrinsics, stride);
  const std::size_t R = local.dim(0);
  const Eigen::Matrix3d rot = camera.pose.rotation.normalized().toRotationMatrix();
  std::vector<double> dirs(R * 3), origins(R * 3);
  for (std::size_t r = 0; r < R; ++r) {
    const Eigen::Vector3d d = rot * Eigen::Vector3d(local[r * 3], local[r * 3 + 1], local[r * 3 + 2]);
    for (std::size_t c = 0; c < 3; ++c) {
      dirs[r * 3 + c] = d[static_cast<Eigen::Index>(c)];
      origins[r * 3 + c] = camera.pose.translation[static_cast<Eigen::Index>(c)];
    }
  }
  return RayBatch{Tensor::from_data({R, 3}, std::move(origins)), Tensor::from_data({R, 3}, std::move(dirs)),
                  near, far, samples};
}

RayBatch rays_from_pose(const Intrinsics& k, std::size_t stride, const Tensor& translation,
                        const Tensor& unit_rotation, double near, double far, std::size_t samples) {
  if (translation.shape() != Shape{3}) throw DimensionError("rays_from_pose expects a [3] translation");
  const Tensor local = camera_directions(k, stride);
  const std::size_t R = local.dim(0);
  const Tensor rot = quat_to_rotmat(unit_rotation);
  Tensor directions = matmul(local, transpose_last2(rot));
  Tensor origins = add(Tensor::zeros({R, 3}), translation);
  return RayBatch{std::move(origins), std::move(directions), near, far, samples};
}

SampleSchedule stratified_samples(std::size_t rays, double near, double far, std::size_t samples, Mode mode,
                                  Rng* rng) {
  if (samples == 0) throw ConfigError("ray sample count must be at least 1");
  if (!(far > near) || !(near > 0.0)) throw ConfigError("ray bounds must satisfy far > near > 0");
  if (mode == Mode::train && rng == nullptr) throw ConfigError("jittered sampling needs a random generator");
  const double bin = (far - near) / static_cast<double>(samples);
  SampleSchedule s;
  s.t.resize(rays * samples);
  s.delta.resize(rays * samples);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t r = 0; r < rays; ++r) {
    double* t = s.t.data() + r * samples;
    for (std::size_t i = 0; i < samples; ++i) {
      const double u = mode == Mode::train ? unit(*rng) : 0.5;
      t[i] = near + (static_cast<double>(i) + u) * bin;
    }
    double* d = s.delta.data() + r * samples;
    for (std::size_t i = 0; i + 1 < samples; ++i) d[i] = t[i + 1] - t[i];
    d[samples - 1] = bin;
  }
  return s;
}

Tensor ray_points(const Tensor& origins, const Tensor& directions, std::span<const double> t,
                  std::size_t samples) {
  if (origins.rank() != 2 || origins.dim(1) != 3 || origins.shape() != directions.shape()) {
    detail::shape_mismatch("ray_points", origins.shape(), directions.shape());
  }
  const std::size_t R = origins.dim(0);
  if (t.size() != R * samples) throw DimensionError("ray_points: depth count does not match rays x samples");
  const auto& ov = origins.values();
  const auto& dv = directions.values();
  std::vector<double> out(R * samples * 3);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t c = 0; c < 3; ++c)
        out[(r * samples + s) * 3 + c] = ov[r * 3 + c] + t[r * samples + s] * dv[r * 3 + c];
  std::vector<double> depths(t.begin(), t.end());
  return Tensor::make_result("ray_points", {R * samples, 3}, std::move(out), {origins, directions},
                             [origins, directions, depths = std::move(depths), R, samples](const detail::Node& self) {
                               auto go = grad_of(origins);
                               auto gd = grad_of(directions);
                               for (std::size_t r = 0; r < R; ++r)
                                 for (std::size_t s = 0; s < samples; ++s)
                                   for (std::size_t c = 0; c < 3; ++c) {
                                     const double g = self.grad[(r * samples + s) * 3 + c];
                                     if (!go.empty()) go[r * 3 + c] += g;
                                     if (!gd.empty()) gd[r * 3 + c] += depths[r * samples + s] * g;
                                   }
                             });
}

VolumeRenderResult volume_render(const Tensor& sigma, const Tensor& values, std::span<const double> delta) {
  if (sigma.rank() != 2 || values.rank() != 3 || values.dim(0) != sigma.dim(0) || values.dim(1) != sigma.dim(1)) {
    detail::shape_mismatch("volume_render", sigma.shape(), values.shape());
  }
  const std::size_t R = sigma.dim(0);
  const std::size_t S = sigma.dim(1);
  const std::size_t K = values.dim(2);
  if (S == 0) throw ConfigError("volume rendering needs at least one sample per ray");
  if (delta.size() != R * S) throw DimensionError("volume_render: spacing count does not match rays x samples");
  const auto& sv = sigma.values();
  const auto& vv = values.values();
  VolumeRenderResult res;
  res.weights.resize(R * S);
  res.transmittance_end.resize(R);
  // T[r*(S+1) + i] = exp(-sum_{j<i} sigma_j delta_j), i = 0..S
  std::vector<double> trans(R * (S + 1));
  std::vector<double> out(R * K, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    double optical = 0.0;
    double* T = trans.data() + r * (S + 1);
    for (std::size_t i = 0; i < S; ++i) {
      const double tau = sv[r * S + i] * delta[r * S + i];
      T[i] = std::exp(-optical);
      const double w = T[i] * -std::expm1(-tau);
      res.weights[r * S + i] = w;
      optical += tau;
      for (std::size_t k = 0; k < K; ++k) out[r * K + k] += w * vv[(r * S + i) * K + k];
    }
    T[S] = std::exp(-optical);
    res.transmittance_end[r] = T[S];
  }
  std::vector<double> delta_copy(delta.begin(), delta.end());
  res.integrated = Tensor::make_result(
      "volume_render", {R, K}, std::move(out), {sigma, values},
      [sigma, values, R, S, K, weights = res.weights, trans = std::move(trans),
       delta = std::move(delta_copy)](const detail::Node& self) {
        auto gs = grad_of(sigma);
        auto gv = grad_of(values);
        const auto& vv = values.values();
        std::vector<double> gw(S);
        for (std::size_t r = 0; r < R; ++r) {
          const double* g = self.grad.data() + r * K;
          for (std::size_t i = 0; i < S; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
              acc += g[k] * vv[(r * S + i) * K + k];
              if (!gv.empty()) gv[(r * S + i) * K + k] += weights[r * S + i] * g[k];
            }
            gw[i] = acc;
          }
          if (gs.empty()) continue;
          // d w_i / d tau_j = -w_i for j < i, T_{i+1} for j = i.
          const double* T = trans.data() + r * (S + 1);
          double later = 0.0;  // sum_{i>j} gw_i w_i
          for (std::size_t j = S; j-- > 0;) {
            const double gtau = gw[j] * T[j + 1] - later;
            gs[r * S + j] += gtau * delta[r * S + j];
            later += gw[j] * weights[r * S + j];
          }
        }
      });
  return res;
}

RenderResult render_rays(const SceneField& field, const RayBatch& rays, Mode mode, Rng* rng) {
  const std::size_t R = rays.size();
  const std::size_t S = rays.samples;
  const auto schedule = stratified_samples(R, rays.near, rays.far, S, mode, rng);
  const Tensor points = ray_points(rays.origins, rays.directions, schedule.t, S);
  const FieldOutput f = field.evaluate(points);
  const std::size_t C = field.num_classes();
  const Tensor values = reshape(concat({f.logits, f.rgb}, 1), {R, S, C + 3});
  auto vr = volume_render(reshape(f.sigma, {R, S}), values, schedule.delta);
  RenderResult out;
  out.logits = slice(vr.integrated, 1, 0, C);
  out.rgb = slice(vr.integrated, 1, C, 3);
  out.weights = std::move(vr.weights);
  out.transmittance_end = std::move(vr.transmittance_end);
  return out;
}

std::size_t render_thread_count() {
  if (const char* env = std::getenv("POSEFORGE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t C = logits.shape().back();
  const std::size_t rows = logits.numel() / C;
  std::vector<std::size_t> out(rows);
  const auto& v = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* row = v.data() + r * C;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + C) - row);
  }
  return out;
}

std::vector<std::size_t> RenderedImage::labels() const {
  const std::size_t C = logits.dim(0);
  const std::size_t n = logits.dim(1) * logits.dim(2);
  std::vector<std::size_t> out(n);
  const auto& v = logits.values();
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (v[c * n + p] > v[best * n + p]) best = c;
    }
    out[p] = best;
  }
  return out;
}

RenderedImage render_image(const Camera& camera, const SceneField& field, std::size_t stride, double near,
                           double far, std::size_t samples) {
  const std::size_t w = camera.intrinsics.strided_width(stride);
  const std::size_t h = camera.intrinsics.strided_height(stride);
  const std::size_t C = field.num_classes();
  const RayBatch all = generate_rays(camera, near, far, samples, stride);
  std::vector<double> logits(C * h * w), rgb(3 * h * w);
  const std::size_t workers = std::min(render_thread_count(), h);
  auto render_rows = [&](std::size_t row_begin, std::size_t row_end) {
    NoGradGuard no_grad;
    // Bounded chunks keep the per-call point count small.
    const std::size_t rows_per_chunk = std::max<std::size_t>(1, 4096 / std::max<std::size_t>(1, w * samples / 8));
    for (std::size_t r0 = row_begin; r0 < row_end; r0 += rows_per_chunk) {
      const std::size_t r1 = std::min(row_end, r0 + rows_per_chunk);
      const std::size_t first = r0 * w;
      const std::size_t count = (r1 - r0) * w;
      RayBatch chunk{slice(all.origins, 0, first, count), slice(all.directions, 0, first, count), near, far,
                     samples};
      const auto res = render_rays(field, chunk, Mode::eval);
      for (std::size_t p = 0; p < count; ++p) {
        for (std::size_t c = 0; c < C; ++c) logits[c * h * w + first + p] = res.logits[p * C + c];
        for (std::size_t c = 0; c < 3; ++c) rgb[c * h * w + first + p] = res.rgb[p * 3 + c];
      }
    }
  };
  if (workers <= 1) {
    render_rows(0, h);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (h + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
      const std::size_t b = t * per;
      const std::size_t e = std::min(h, b + per);
      if (b < e) pool.emplace_back(render_rows, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return RenderedImage{Tensor::from_data({C, h, w}, std::move(logits)), Tensor::from_data({3, h, w}, std::move(rgb))};
}

}  // namespace poseforge
