#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "stretchtime/numcore.hpp"

namespace stretchtime::numcore {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void fail(std::string_view op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

[[noreturn]] void fail2(std::string_view op, const Shape& a, const Shape& b) {
  fail(op, "incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
  Shape out;
  std::size_t a_period;  // a index = i % a_period
  std::size_t b_period;
};

Broadcast broadcast(std::string_view op, const Shape& a, const Shape& b) {
  const std::size_t na = element_count(a);
  const std::size_t nb = element_count(b);
  if (a == b) return {a, na, nb};
  const Shape sa = strip_leading_ones(a);
  const Shape sb = strip_leading_ones(b);
  if (nb <= na && is_suffix(sb, strip_leading_ones(a))) {
    return {a.size() >= b.size() ? a : b, na, nb};
  }
  if (na < nb && is_suffix(sa, sb)) return {b, na, nb};
  fail2(op, a, b);
}

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    fail(op, "axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t last_dim(std::string_view op, const Tensor& x) {
  if (x.rank() == 0) fail(op, "requires rank >= 1, got scalar");
  return x.shape().back();
}

template <class Forward, class Derivative>
Tensor unary(Primitive kind, const Tensor& x, Forward f, Derivative df) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(kind, {x}, y, [x, y, df] {
      auto gy = y.grad();
      auto xs = x.values();
      auto ys = y.values();
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xs[i], ys[i]);
    });
  }
  return y;
}

// Visits (i, ia, ib) for every output element. One operand always spans the
// output; the other repeats with its own period.
template <class Fn>
void for_each_broadcast(std::size_t n, std::size_t a_period, std::size_t b_period, Fn fn) {
  if (a_period == n && b_period == n) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
  } else if (a_period == n) {
    for (std::size_t base = 0; base < n; base += b_period) {
      for (std::size_t j = 0; j < b_period; ++j) fn(base + j, base + j, j);
    }
  } else {
    for (std::size_t base = 0; base < n; base += a_period) {
      for (std::size_t j = 0; j < a_period; ++j) fn(base + j, j, base + j);
    }
  }
}

template <class Forward, class GradA, class GradB>
Tensor binary(Primitive kind, const Tensor& a, const Tensor& b, Forward f, GradA ga_fn,
              GradB gb_fn) {
  const Broadcast bc = broadcast(primitive_name(kind), a.shape(), b.shape());
  const double* av = a.values().data();
  const double* bv = b.values().data();
  const std::size_t n = element_count(bc.out);
  std::vector<double> out(n);
  double* o = out.data();
  for_each_broadcast(n, bc.a_period, bc.b_period,
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(av[ia], bv[ib]); });
  Tensor y(bc.out, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    y.set_requires_grad(true);
    tape->record(kind, {a, b}, y, [a, b, y, bc, n, ga_fn, gb_fn] {
      const double* gy = y.grad().data();
      const double* av = a.values().data();
      const double* bv = b.values().data();
      if (a.requires_grad()) {
        double* ga = grad_buffer(a).data();
        for_each_broadcast(n, bc.a_period, bc.b_period, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          ga[ia] += gy[i] * ga_fn(av[ia], bv[ib]);
        });
      }
      if (b.requires_grad()) {
        double* gb = grad_buffer(b).data();
        for_each_broadcast(n, bc.a_period, bc.b_period, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          gb[ib] += gy[i] * gb_fn(av[ia], bv[ib]);
        });
      }
    });
  }
  return y;
}

}  // namespace

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr std::string_view op = "matmul";
  if (a.rank() < 2 || b.rank() < 2) fail2(op, a.shape(), b.shape());
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) fail2(op, as, bs);

  const bool shared_rhs = bs.size() == 2;
  if (!shared_rhs && (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    fail2(op, as, bs);
  }
  const std::size_t batch = element_count(as) / (m * k);
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n);
  if (shared_rhs) {
    MutMap(out.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n)).noalias() =
        ConstMap(a.values().data(), static_cast<Eigen::Index>(batch * m),
                 static_cast<Eigen::Index>(k)) *
        ConstMap(b.values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap(out.data() + i * m * n, m, n).noalias() =
          ConstMap(a.values().data() + i * m * k, m, k) *
          ConstMap(b.values().data() + i * k * n, k, n);
    }
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    y.set_requires_grad(true);
    tape->record(Primitive::matmul, {a, b}, y, [a, b, y, m, k, n, batch, shared_rhs] {
      const double* gy = y.grad().data();
      if (shared_rhs) {
        const auto rows = static_cast<Eigen::Index>(batch * m);
        ConstMap gmap(gy, rows, n);
        if (a.requires_grad()) {
          MutMap(grad_buffer(a).data(), rows, k).noalias() +=
              gmap * ConstMap(b.values().data(), k, n).transpose();
        }
        if (b.requires_grad()) {
          MutMap(grad_buffer(b).data(), k, n).noalias() +=
              ConstMap(a.values().data(), rows, k).transpose() * gmap;
        }
        return;
      }
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap gmap(gy + i * m * n, m, n);
        if (a.requires_grad()) {
          MutMap(grad_buffer(a).data() + i * m * k, m, k).noalias() +=
              gmap * ConstMap(b.values().data() + i * k * n, k, n).transpose();
        }
        if (b.requires_grad()) {
          MutMap(grad_buffer(b).data() + i * k * n, k, n).noalias() +=
              ConstMap(a.values().data() + i * m * k, m, k).transpose() * gmap;
        }
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::add, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      Primitive::scale, x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor concat(const std::vector<Tensor>& parts) {
  constexpr std::string_view op = "concat";
  if (parts.empty()) fail(op, "no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) fail(op, "scalar inputs");
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      fail2(op, first, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = element_count(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[p];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(std::move(out_shape), std::move(out));

  Tape* tape = nullptr;
  if (!active_tape()) return y;
  for (const auto& p : parts) {
    if ((tape = recording_tape({&p}))) break;
  }
  if (tape) {
    y.set_requires_grad(true);
    tape->record(Primitive::concat, parts, y, [parts, y, widths, rows, total] {
      auto gy = y.grad();
      std::size_t offset = 0;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        if (parts[p].requires_grad()) {
          auto g = grad_buffer(parts[p]);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < widths[p]; ++j) {
              g[r * widths[p] + j] += gy[r * total + offset + j];
            }
          }
        }
        offset += widths[p];
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  constexpr std::string_view op = "slice";
  const AxisSplit s = split_axis(op, x.shape(), axis);
  if (begin > end || end > s.length) {
    fail(op, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of bounds for shape " +
                 shape_string(x.shape()) + " axis " + std::to_string(axis));
  }
  const std::size_t len = end - begin;
  std::vector<double> out(s.outer * len * s.inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.length + begin) * s.inner), len * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor y(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::slice, {x}, y, [x, y, s, begin, len] {
      auto gy = y.grad();
      auto gx = grad_buffer(x);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t src = o * len * s.inner;
        const std::size_t dst = (o * s.length + begin) * s.inner;
        for (std::size_t j = 0; j < len * s.inner; ++j) gx[dst + j] += gy[src + j];
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) fail("transpose", "requires rank >= 2, got shape " + shape_string(x.shape()));
  const Shape& xs = x.shape();
  const std::size_t r = xs[xs.size() - 2];
  const std::size_t c = xs.back();
  const std::size_t batch = element_count(xs) / (r * c);
  std::vector<double> out(element_count(xs));
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * r * c;
    double* dst = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
  }
  Shape out_shape = xs;
  std::swap(out_shape[xs.size() - 2], out_shape[xs.size() - 1]);
  Tensor y(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::transpose, {x}, y, [x, y, r, c, batch] {
      auto gy = y.grad();
      auto gx = grad_buffer(x);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * r * c;
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) gx[base + i * c + j] += gy[base + j * r + i];
        }
      }
    });
  }
  return y;
}

namespace {

Tensor reduce_axis(Primitive kind, const Tensor& x, std::size_t axis, double factor) {
  const AxisSplit s = split_axis(primitive_name(kind), x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.length; ++l) {
      const double* src = xv.data() + (o * s.length + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  if (factor != 1.0) {
    for (auto& v : out) v *= factor;
  }
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor y(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(kind, {x}, y, [x, y, s, factor] {
      auto gy = y.grad();
      auto gx = grad_buffer(x);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.length; ++l) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            gx[(o * s.length + l) * s.inner + i] += factor * gy[o * s.inner + i];
          }
        }
      }
    });
  }
  return y;
}

Tensor reduce_all(Primitive kind, const Tensor& x, double factor) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor y = Tensor::scalar(total * factor);
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(kind, {x}, y, [x, y, factor] {
      const double g = y.grad()[0] * factor;
      for (auto& v : grad_buffer(x)) v += g;
    });
  }
  return y;
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis(Primitive::sum, x, axis, 1.0); }

Tensor mean(const Tensor& x, std::size_t axis) {
  const std::size_t len = split_axis("mean", x.shape(), axis).length;
  if (len == 0) fail("mean", "empty axis");
  return reduce_axis(Primitive::mean, x, axis, 1.0 / static_cast<double>(len));
}

Tensor sum_all(const Tensor& x) { return reduce_all(Primitive::sum, x, 1.0); }

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) fail("mean", "empty tensor");
  return reduce_all(Primitive::mean, x, 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = last_dim("softmax", x);
  const std::size_t rows = d ? x.numel() / d : 0;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double* dst = out.data() + r * d;
    const double peak = *std::max_element(src, src + d);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = std::exp(src[j] - peak);
      total += dst[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::softmax, {x}, y, [x, y, rows, d] {
      auto gy = y.grad();
      auto yv = y.values();
      auto gx = grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gy[base + j] * yv[base + j];
        for (std::size_t j = 0; j < d; ++j) gx[base + j] += yv[base + j] * (gy[base + j] - dot);
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  constexpr std::string_view op = "layer_norm";
  const std::size_t d = last_dim(op, x);
  if (gain.numel() != d || bias.numel() != d) {
    fail(op, "gain/bias shapes " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                 " do not match feature size of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (src[j] - mu) * rstd;
      normalized[r * d + j] = xhat;
      out[r * d + j] = xhat * gv[j] + bv[j];
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &gain, &bias})) {
    y.set_requires_grad(true);
    tape->record(Primitive::layer_norm, {x, gain, bias}, y,
                 [x, gain, bias, y, d, rows, normalized = std::move(normalized),
                  inv_std = std::move(inv_std)] {
                   auto gy = y.grad();
                   auto gv = gain.values();
                   if (gain.requires_grad() || bias.requires_grad()) {
                     std::span<double> gg, gb;
                     if (gain.requires_grad()) gg = grad_buffer(gain);
                     if (bias.requires_grad()) gb = grad_buffer(bias);
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < d; ++j) {
                         if (!gg.empty()) gg[j] += gy[r * d + j] * normalized[r * d + j];
                         if (!gb.empty()) gb[j] += gy[r * d + j];
                       }
                     }
                   }
                   if (!x.requires_grad()) return;
                   auto gx = grad_buffer(x);
                   const double inv_d = 1.0 / static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_g = 0.0;
                     double mean_gx = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double g = gy[r * d + j] * gv[j];
                       mean_g += g;
                       mean_gx += g * normalized[r * d + j];
                     }
                     mean_g *= inv_d;
                     mean_gx *= inv_d;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double g = gy[r * d + j] * gv[j];
                       gx[r * d + j] +=
                           inv_std[r] * (g - mean_g - normalized[r * d + j] * mean_gx);
                     }
                   }
                 });
  }
  return y;
}

Tensor softplus(const Tensor& x) {
  return unary(Primitive::softplus, x, softplus_value,
               [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      Primitive::tanh, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      Primitive::exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sin(const Tensor& x) {
  return unary(
      Primitive::sin, x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(
      Primitive::cos, x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  auto tanh_inner = std::make_shared<std::vector<double>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double t = std::tanh(k * (v + c * v * v * v));
    (*tanh_inner)[i] = t;
    out[i] = 0.5 * v * (1.0 + t);
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::gelu, {x}, y, [x, y, tanh_inner] {
      auto gy = y.grad();
      auto xs = x.values();
      auto gx = grad_buffer(x);
      const auto& tv = *tanh_inner;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double v = xs[i];
        const double t = tv[i];
        gx[i] += gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v));
      }
    });
  }
  return y;
}

Tensor cumsum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("cumsum", x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double running = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const std::size_t idx = (o * s.length + l) * s.inner + i;
        running += xv[idx];
        out[idx] = running;
      }
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::cumsum, {x}, y, [x, y, s] {
      auto gy = y.grad();
      auto gx = grad_buffer(x);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          double running = 0.0;
          for (std::size_t l = s.length; l-- > 0;) {
            const std::size_t idx = (o * s.length + l) * s.inner + i;
            running += gy[idx];
            gx[idx] += running;
          }
        }
      }
    });
  }
  return y;
}

Tensor masked_zero(const Tensor& x, const Tensor& mask) {
  if (mask.requires_grad()) fail("masked_zero", "mask must be a constant tensor");
  const Broadcast bc = broadcast("masked_zero", x.shape(), mask.shape());
  if (bc.out != x.shape() && element_count(bc.out) != x.numel()) {
    fail2("masked_zero", x.shape(), mask.shape());
  }
  auto xv = x.values();
  auto mv = mask.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mv[i % bc.b_period];
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    y.set_requires_grad(true);
    tape->record(Primitive::masked_zero, {x, mask}, y, [x, mask, y, bc] {
      auto gy = y.grad();
      auto mv = mask.values();
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mv[i % bc.b_period];
    });
  }
  return y;
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) {
    fail("embedding", "table must be rank 2, got shape " + shape_string(table.shape()));
  }
  const std::size_t rows = table.size(0);
  const std::size_t d = table.size(1);
  std::vector<double> out(indices.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      fail("embedding", "index " + std::to_string(indices[i]) + " out of range for table " +
                            shape_string(table.shape()));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor y({indices.size(), d}, std::move(out));
  if (Tape* tape = recording_tape({&table})) {
    y.set_requires_grad(true);
    tape->record(Primitive::embedding, {table}, y, [table, y, indices, d] {
      auto gy = y.grad();
      auto gt = grad_buffer(table);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gt[indices[i] * d + j] += gy[i * d + j];
      }
    });
  }
  return y;
}

}  // namespace stretchtime::numcore
