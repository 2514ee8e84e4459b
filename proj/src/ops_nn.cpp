#include <algorithm>
#include <cmath>

#include "op_support.hpp"
#include "poseforge/ops.hpp"

namespace poseforge {

using detail::grad_of;

namespace {

std::size_t last_extent(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw DimensionError(std::string(op) + " needs at least one axis");
  return a.shape().back();
}

void require_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  const std::size_t n = last_extent(a, "softmax_rows");
  const auto& av = a.values();
  require_finite(av, "softmax_rows");
  const std::size_t rows = n == 0 ? 0 : av.size() / n;
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return Tensor::make_result("softmax_rows", a.shape(), std::move(out), {a},
                             [a, rows, n](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * n;
                                 const double* g = self.grad.data() + r * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                                 for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (g[j] - dot);
                               }
                             });
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t n = last_extent(a, "log_softmax_rows");
  const auto& av = a.values();
  require_finite(av, "log_softmax_rows");
  const std::size_t rows = n == 0 ? 0 : av.size() / n;
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[j] - lse;
  }
  return Tensor::make_result("log_softmax_rows", a.shape(), std::move(out), {a},
                             [a, rows, n](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * n;
                                 const double* g = self.grad.data() + r * n;
                                 double gs = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) gs += g[j];
                                 for (std::size_t j = 0; j < n; ++j)
                                   ga[r * n + j] += g[j] - std::exp(y[j]) * gs;
                               }
                             });
}

Tensor gather_last(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t n = last_extent(a, "gather_last");
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  if (index.size() != rows) {
    throw DimensionError("gather_last: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(rows) + " rows of " + to_string(a.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= n) throw DimensionError("gather_last: index out of range");
    out[r] = a.values()[r * n + idx[r]];
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  return Tensor::make_result("gather_last", std::move(out_shape), std::move(out), {a},
                             [a, idx = std::move(idx), n](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += self.grad[r];
                             });
}

BatchNormStats BatchNormStats::identity(std::size_t channels) {
  BatchNormStats s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  s.batches_tracked = Tensor::zeros({1});
  return s;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                 Mode mode) {
  const Shape& sx = x.shape();
  if (sx.size() != 3 && sx.size() != 4) throw DimensionError("batchnorm expects [B,C,H,W] or [C,H,W], got " + to_string(sx));
  const bool batched = sx.size() == 4;
  const std::size_t B = batched ? sx[0] : 1;
  const std::size_t C = sx[batched ? 1 : 0];
  const std::size_t S = sx[sx.size() - 2] * sx[sx.size() - 1];
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.numel() != C ||
      stats.running_var.numel() != C) {
    detail::shape_mismatch("batchnorm parameters", sx, gamma.shape());
  }
  const std::size_t M = B * S;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> mu(C), invstd(C);
  if (mode == Mode::train) {
    if (M == 0) throw DimensionError("batchnorm over an empty batch");
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) m += xv[(b * C + c) * S + s];
      m /= static_cast<double>(M);
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = xv[(b * C + c) * S + s] - m;
          v += d * d;
        }
      const double biased = v / static_cast<double>(M);
      const double unbiased = M > 1 ? v / static_cast<double>(M - 1) : biased;
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(biased + stats.eps);
      rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * m;
      rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * unbiased;
    }
    stats.batches_tracked.mutable_data()[0] += 1.0;
  } else {
    if (stats.batches_tracked.item() <= 0.0) {
      throw StateError("batchnorm in eval mode has no accumulated running statistics");
    }
    const auto& rm = stats.running_mean.values();
    const auto& rv = stats.running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(rv[c] + stats.eps);
    }
  }
  std::vector<double> xhat(xv.size()), out(xv.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (b * C + c) * S + s;
        xhat[i] = (xv[i] - mu[c]) * invstd[c];
        out[i] = gv[c] * xhat[i] + bv[c];
      }
  const bool training = mode == Mode::train;
  return Tensor::make_result(
      "batchnorm", sx, std::move(out), {x, gamma, beta},
      [x, gamma, beta, B, C, S, M, training, invstd = std::move(invstd),
       xhat = std::move(xhat)](const detail::Node& self) {
        auto gx = grad_of(x);
        auto gg = grad_of(gamma);
        auto gbt = grad_of(beta);
        const auto& gv = gamma.values();
        const auto& g = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (b * C + c) * S + s;
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          if (!gg.empty()) gg[c] += sum_gx;
          if (!gbt.empty()) gbt[c] += sum_g;
          if (gx.empty()) continue;
          const double scale = gv[c] * invstd[c];
          const double mf = static_cast<double>(M);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (b * C + c) * S + s;
              gx[i] += training ? scale * (g[i] - sum_g / mf - xhat[i] * sum_gx / mf) : scale * g[i];
            }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = last_extent(x, "layer_norm");
  if (gamma.numel() != n || beta.numel() != n) detail::shape_mismatch("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const auto& xv = x.values();
  std::vector<double> xhat(xv.size()), out(xv.size()), invstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += xr[j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += (xr[j] - m) * (xr[j] - m);
    invstd[r] = 1.0 / std::sqrt(v / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - m) * invstd[r];
      out[r * n + j] = gamma.values()[j] * xhat[r * n + j] + beta.values()[j];
    }
  }
  return Tensor::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, n, xhat = std::move(xhat), invstd = std::move(invstd)](const detail::Node& self) {
        auto gx = grad_of(x);
        auto gg = grad_of(gamma);
        auto gb = grad_of(beta);
        const auto& gv = gamma.values();
        const double nf = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * n;
          const double* xh = xhat.data() + r * n;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (!gg.empty()) gg[j] += g[j] * xh[j];
            if (!gb.empty()) gb[j] += g[j];
            const double d = g[j] * gv[j];
            sum_d += d;
            sum_dx += d * xh[j];
          }
          if (gx.empty()) continue;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[j] * gv[j];
            gx[r * n + j] += invstd[r] * (d - sum_d / nf - xh[j] * sum_dx / nf);
          }
        }
      });
}

std::vector<detail::Tap> detail::bilinear_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<Tap> taps(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > n_in - 1) i0 = n_in - 1;
    const std::size_t i1 = i0 + 1 < n_in ? i0 + 1 : i0;
    const double frac = src - static_cast<double>(i0);
    taps[i] = Tap{i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

std::vector<double> interpolation_matrix(std::size_t n_in, std::size_t n_out) {
  if (n_in == 0 || n_out == 0) throw DimensionError("interpolation_matrix needs positive extents");
  std::vector<double> m(n_out * n_in, 0.0);
  const auto taps = detail::bilinear_taps(n_in, n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    m[i * n_in + taps[i].i0] += taps[i].w0;
    m[i * n_in + taps[i].i1] += taps[i].w1;
  }
  return m;
}

Tensor bilinear_resize(const Tensor& a, std::size_t out_h, std::size_t out_w) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("bilinear_resize needs rank >= 2, got " + to_string(s));
  const std::size_t H = s[s.size() - 2];
  const std::size_t W = s[s.size() - 1];
  if (H == 0 || W == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("bilinear_resize needs positive extents, got " + to_string(s));
  }
  const std::size_t planes = a.numel() / (H * W);
  const auto ty = detail::bilinear_taps(H, out_h);
  const auto tx = detail::bilinear_taps(W, out_w);
  const auto& av = a.values();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = av.data() + p * H * W;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& ry = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& rx = tx[x];
        dst[y * out_w + x] = ry.w0 * (rx.w0 * src[ry.i0 * W + rx.i0] + rx.w1 * src[ry.i0 * W + rx.i1]) +
                             ry.w1 * (rx.w0 * src[ry.i1 * W + rx.i0] + rx.w1 * src[ry.i1 * W + rx.i1]);
      }
    }
  }
  Shape out_shape = s;
  out_shape[s.size() - 2] = out_h;
  out_shape[s.size() - 1] = out_w;
  return Tensor::make_result(
      "bilinear_resize", std::move(out_shape), std::move(out), {a},
      [a, planes, H, W, out_h, out_w, ty, tx](const detail::Node& self) {
        auto ga = grad_of(a);
        for (std::size_t p = 0; p < planes; ++p) {
          double* gsrc = ga.data() + p * H * W;
          const double* g = self.grad.data() + p * out_h * out_w;
          for (std::size_t y = 0; y < out_h; ++y) {
            const auto& ry = ty[y];
            for (std::size_t x = 0; x < out_w; ++x) {
              const auto& rx = tx[x];
              const double gv = g[y * out_w + x];
              gsrc[ry.i0 * W + rx.i0] += gv * ry.w0 * rx.w0;
              gsrc[ry.i0 * W + rx.i1] += gv * ry.w0 * rx.w1;
              gsrc[ry.i1 * W + rx.i0] += gv * ry.w1 * rx.w0;
              gsrc[ry.i1 * W + rx.i1] += gv * ry.w1 * rx.w1;
            }
          }
        }
      });
}

Tensor bilinear_upsample2x(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("bilinear_upsample2x needs rank >= 2, got " + to_string(s));
  return bilinear_resize(a, 2 * s[s.size() - 2], 2 * s[s.size() - 1]);
}

}  // namespace poseforge
