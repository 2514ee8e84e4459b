#include <algorithm>

#include "op_support.hpp"
#include "poseforge/ops.hpp"

namespace poseforge {

using detail::ConstMatrixMap;
using detail::grad_of;
using detail::MatrixMap;

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool ok_rank = (sa.size() == 2 || sa.size() == 3) && (sb.size() == 2 || sb.size() == 3);
  if (!ok_rank) detail::shape_mismatch("matmul", sa, sb);
  const std::size_t ba = sa.size() == 3 ? sa[0] : 0;
  const std::size_t bb = sb.size() == 3 ? sb[0] : 0;
  if (ba && bb && ba != bb) detail::shape_mismatch("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) detail::shape_mismatch("matmul", sa, sb);
  const std::size_t batch = std::max<std::size_t>({ba, bb, 1});
  const std::size_t stride_a = ba ? m * k : 0;
  const std::size_t stride_b = bb ? k * n : 0;

  Shape out_shape = (ba || bb) ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap A(pa + i * stride_a, m, k);
    ConstMatrixMap B(pb + i * stride_b, k, n);
    MatrixMap C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return Tensor::make_result(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [a, b, batch, m, k, n, stride_a, stride_b](const detail::Node& self) {
        auto ga = grad_of(a);
        auto gb = grad_of(b);
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMatrixMap G(self.grad.data() + i * m * n, m, n);
          if (!ga.empty()) {
            MatrixMap GA(ga.data() + i * stride_a, m, k);
            GA.noalias() += G * ConstMatrixMap(pb + i * stride_b, k, n).transpose();
          }
          if (!gb.empty()) {
            MatrixMap GB(gb.data() + i * stride_b, k, n);
            GB.noalias() += ConstMatrixMap(pa + i * stride_a, m, k).transpose() * G;
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[1]) detail::shape_mismatch("linear", sx, sw);
  const std::size_t in = sw[1];
  const std::size_t outf = sw[0];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    detail::shape_mismatch("linear bias", sw, bias.shape());
  }
  const std::size_t rows = in == 0 ? 0 : x.numel() / in;
  Shape out_shape = sx;
  out_shape.back() = outf;
  std::vector<double> out(rows * outf);
  {
    ConstMatrixMap X(x.values().data(), rows, in);
    ConstMatrixMap W(weight.values().data(), outf, in);
    MatrixMap Y(out.data(), rows, outf);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> bv(bias.values().data(), outf);
      Y.rowwise() += bv;
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      "linear", std::move(out_shape), std::move(out), std::move(inputs),
      [x, weight, bias, rows, in, outf](const detail::Node& self) {
        ConstMatrixMap G(self.grad.data(), rows, outf);
        if (auto gx = grad_of(x); !gx.empty()) {
          MatrixMap(gx.data(), rows, in).noalias() += G * ConstMatrixMap(weight.values().data(), outf, in);
        }
        if (auto gw = grad_of(weight); !gw.empty()) {
          MatrixMap(gw.data(), outf, in).noalias() +=
              G.transpose() * ConstMatrixMap(x.values().data(), rows, in);
        }
        if (bias.defined()) {
          if (auto gb = grad_of(bias); !gb.empty()) {
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), outf) += G.colwise().sum();
          }
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width, out_channels, kernel, stride, padding, out_h, out_w;
  [[nodiscard]] std::size_t col_rows() const { return channels * kernel * kernel; }
  [[nodiscard]] std::size_t col_cols() const { return out_h * out_w; }
};

void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if ((sx.size() != 3 && sx.size() != 4) || sw.size() != 4 || sw[2] != sw[3]) {
    detail::shape_mismatch("conv2d", sx, sw);
  }
  const bool batched = sx.size() == 4;
  ConvGeometry g{};
  g.batch = batched ? sx[0] : 1;
  g.channels = sx[batched ? 1 : 0];
  g.height = sx[batched ? 2 : 1];
  g.width = sx[batched ? 3 : 2];
  g.out_channels = sw[0];
  g.kernel = sw[2];
  g.stride = stride;
  g.padding = padding;
  if (sw[1] != g.channels) detail::shape_mismatch("conv2d", sx, sw);
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel) {
    detail::shape_mismatch("conv2d", sx, sw);
  }
  g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    detail::shape_mismatch("conv2d bias", sw, bias.shape());
  }

  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = g.out_channels * g.col_cols();
  auto cols = std::make_shared<std::vector<double>>(g.batch * g.col_rows() * g.col_cols());
  std::vector<double> out(g.batch * out_size);
  ConstMatrixMap W(weight.values().data(), g.out_channels, g.col_rows());
  for (std::size_t b = 0; b < g.batch; ++b) {
    double* cb = cols->data() + b * g.col_rows() * g.col_cols();
    im2col(x.values().data() + b * in_size, g, cb);
    MatrixMap Y(out.data() + b * out_size, g.out_channels, g.col_cols());
    Y.noalias() = W * ConstMatrixMap(cb, g.col_rows(), g.col_cols());
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> bv(bias.values().data(), g.out_channels);
      Y.colwise() += bv;
    }
  }
  Shape out_shape = batched ? Shape{g.batch, g.out_channels, g.out_h, g.out_w}
                            : Shape{g.out_channels, g.out_h, g.out_w};
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      "conv2d", std::move(out_shape), std::move(out), std::move(inputs),
      [x, weight, bias, g, cols, in_size, out_size](const detail::Node& self) {
        auto gx = grad_of(x);
        auto gw = grad_of(weight);
        std::span<double> gb;
        if (bias.defined()) gb = grad_of(bias);
        ConstMatrixMap W(weight.values().data(), g.out_channels, g.col_rows());
        detail::RowMatrix gcols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          ConstMatrixMap G(self.grad.data() + b * out_size, g.out_channels, g.col_cols());
          const double* cb = cols->data() + b * g.col_rows() * g.col_cols();
          if (!gw.empty()) {
            MatrixMap(gw.data(), g.out_channels, g.col_rows()).noalias() +=
                G * ConstMatrixMap(cb, g.col_rows(), g.col_cols()).transpose();
          }
          if (!gb.empty()) Eigen::Map<Eigen::VectorXd>(gb.data(), g.out_channels) += G.rowwise().sum();
          if (!gx.empty()) {
            gcols.noalias() = W.transpose() * G;
            col2im_add(gcols.data(), g, gx.data() + b * in_size);
          }
        }
      });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 4 || weight.dim(2) != 1) detail::shape_mismatch("conv1x1", x.shape(), weight.shape());
  return conv2d(x, weight, bias, 1, 0);
}

Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  if (weight.rank() != 4 || weight.dim(2) != 3) detail::shape_mismatch("conv3x3", x.shape(), weight.shape());
  if (stride != 1 && stride != 2) throw DimensionError("conv3x3 stride must be 1 or 2");
  return conv2d(x, weight, bias, stride, 1);
}

}  // namespace poseforge
