#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"
#include "poseforge/ops.hpp"

namespace poseforge {

using detail::grad_of;

namespace {

bool broadcastable(const Shape& a, const Shape& b) {
  if (a == b || numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

// out[i] = f(a[i], b[i % nb]); df returns (d/da, d/db).
template <class F, class DF>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DF df) {
  if (!broadcastable(a.shape(), b.shape())) detail::shape_mismatch(name, a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i % nb]);
  return Tensor::make_result(name, a.shape(), std::move(out), {a, b},
                             [a, b, df, nb](const detail::Node& self) {
                               auto ga = grad_of(a);
                               auto gb = grad_of(b);
                               const auto& av = a.values();
                               const auto& bv = b.values();
                               for (std::size_t i = 0; i < av.size(); ++i) {
                                 const auto [da, db] = df(av[i], bv[i % nb], self.value[i]);
                                 if (!ga.empty()) ga[i] += self.grad[i] * da;
                                 if (!gb.empty()) gb[i % nb] += self.grad[i] * db;
                               }
                             });
}

// df(x, y) is the derivative given input x and output y.
template <class F, class DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return Tensor::make_result(name, a.shape(), std::move(out), {a},
                             [a, df](const detail::Node& self) {
                               auto ga = grad_of(a);
                               const auto& av = a.values();
                               for (std::size_t i = 0; i < av.size(); ++i) {
                                 ga[i] += self.grad[i] * df(av[i], self.value[i]);
                               }
                             });
}

struct Partials {
  double da, db;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return Partials{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return Partials{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double) { return Partials{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double) { return Partials{1.0 / y, -x / (y * y)}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(
      "mul_scalar", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sin(const Tensor& a) {
  return unary(
      "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor relu6(const Tensor& a) {
  return unary(
      "relu6", a, [](double x) { return std::clamp(x, 0.0, 6.0); },
      [](double x, double) { return (x > 0.0 && x < 6.0) ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor arccos_clamped(const Tensor& a, double eps) {
  const double lo = -1.0 + eps;
  const double hi = 1.0 - eps;
  return unary(
      "arccos_clamped", a, [lo, hi](double x) { return std::acos(std::clamp(x, lo, hi)); },
      [lo, hi](double x, double) {
        if (x <= lo || x >= hi) return 0.0;
        return -1.0 / std::sqrt(1.0 - x * x);
      });
}

Tensor arccos_grad_clamped(const Tensor& a, double eps) {
  const double lo = -1.0 + eps;
  const double hi = 1.0 - eps;
  return unary(
      "arccos_grad_clamped", a, [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); },
      [lo, hi](double x, double) {
        if (x <= lo || x >= hi) return 0.0;
        return -1.0 / std::sqrt(1.0 - x * x);
      });
}

Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  return Tensor::make_result("sum", {}, {s}, {a}, [a](const detail::Node& self) {
    auto ga = grad_of(a);
    for (auto& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                         to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& av = a.values();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * n + k) * inner + i];
  return Tensor::make_result("sum_axis", std::move(out_shape), std::move(out), {a},
                             [a, outer, inner, n](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t k = 0; k < n; ++k)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     ga[(o * n + k) * inner + i] += self.grad[o * inner + i];
                             });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor norm_l2(const Tensor& a) {
  const auto& s = a.shape();
  if (s.empty()) throw DimensionError("norm_l2 needs at least one axis");
  const std::size_t k = s.back();
  const std::size_t rows = k == 0 ? 0 : a.numel() / k;
  const auto& av = a.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += av[r * k + j] * av[r * k + j];
    out[r] = std::sqrt(acc);
  }
  Shape out_shape(s.begin(), s.end() - 1);
  return Tensor::make_result("norm_l2", std::move(out_shape), std::move(out), {a},
                             [a, rows, k](const detail::Node& self) {
                               auto ga = grad_of(a);
                               const auto& av = a.values();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double n = self.value[r];
                                 if (n == 0.0) continue;
                                 const double scale = self.grad[r] / n;
                                 for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += scale * av[r * k + j];
                               }
                             });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) detail::shape_mismatch("reshape", a.shape(), shape);
  return Tensor::make_result("reshape", std::move(shape), a.values(), {a},
                             [a](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                             });
}

Tensor transpose_last2(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + to_string(s));
  const std::size_t m = s[s.size() - 2];
  const std::size_t n = s[s.size() - 1];
  const std::size_t batch = (m * n == 0) ? 0 : a.numel() / (m * n);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = av[b * m * n + i * n + j];
  return Tensor::make_result("transpose_last2", std::move(out_shape), std::move(out), {a},
                             [a, batch, m, n](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                     ga[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
                             });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + to_string(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) detail::shape_mismatch("concat", first, s);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.dim(axis);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * n * inner), n * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += n;
  }
  return Tensor::make_result("concat", std::move(out_shape), std::move(out), parts,
                             [parts, axis, outer, inner, total](const detail::Node& self) {
                               std::size_t offset = 0;
                               for (const auto& p : parts) {
                                 const std::size_t n = p.dim(axis);
                                 auto gp = grad_of(p);
                                 if (!gp.empty()) {
                                   for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t i = 0; i < n * inner; ++i)
                                       gp[o * n * inner + i] += self.grad[(o * total + offset) * inner + i];
                                 }
                                 offset += n;
                               }
                             });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto& av = a.values();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * n + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return Tensor::make_result("slice", std::move(out_shape), std::move(out), {a},
                             [a, outer, inner, n, start, length](const detail::Node& self) {
                               auto ga = grad_of(a);
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < length * inner; ++i)
                                   ga[(o * n + start) * inner + i] += self.grad[o * length * inner + i];
                             });
}

}  // namespace poseforge
