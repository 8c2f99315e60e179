#include "stretchtime/sype.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace stretchtime::sype {

namespace {

constexpr double kSincThreshold = 1e-4;

struct Coefficients {
  double a, b, c, rho, root_ab, sech2, u, omega;
};

Coefficients coefficients(const HamiltonianBand& band) {
  Coefficients k{};
  k.a = std::exp(band.alpha);
  k.b = std::exp(band.beta);
  k.rho = std::tanh(band.gamma);
  k.root_ab = std::exp(0.5 * (band.alpha + band.beta));
  k.c = k.rho * k.root_ab;
  const double ch = std::cosh(band.gamma);
  k.sech2 = 1.0 / (ch * ch);  // 1 - rho^2 without cancellation
  k.u = k.a * k.b * k.sech2;
  k.omega = k.root_ab / ch;
  return k;
}

// cos(wt) and sin(wt)/w.
struct Trig {
  double cos_wt;
  double sinc_t;
  bool series;
};

Trig trig(const Coefficients& k, double t) {
  const double x = k.omega * t;
  if (std::abs(x) < kSincThreshold) {
    const double x2 = x * x;
    return {std::cos(x), t * (1.0 - x2 / 6.0 + x2 * x2 / 120.0), true};
  }
  return {std::cos(x), std::sin(x) / k.omega, false};
}

Mat2 generator_of(const Coefficients& k) { return {k.c, k.b, -k.a, -k.c}; }

Mat2 flow_of(const Coefficients& k, const Trig& tr) {
  return tr.cos_wt * Mat2::identity() + tr.sinc_t * generator_of(k);
}

FlowJacobian jacobian_of(const Coefficients& k, double t) {
  const Trig tr = trig(k, t);
  const Mat2 gen = generator_of(k);
  FlowJacobian j;
  j.value = flow_of(k, tr);

  // Everything below is expressed through u = omega^2.
  const double dcos_du = -0.5 * t * tr.sinc_t;
  double dsinc_du;
  if (tr.series) {
    const double t3 = t * t * t;
    dsinc_du = -t3 / 6.0 + k.u * t3 * t * t / 60.0;
  } else {
    dsinc_du = (t * tr.cos_wt - tr.sinc_t) / (2.0 * k.u);
  }

  auto partial = [&](double du, double da, double db, double dc) {
    const Mat2 dgen{dc, db, -da, -dc};
    return (dcos_du * du) * Mat2::identity() + (dsinc_du * du) * gen + tr.sinc_t * dgen;
  };
  j.d_alpha = partial(k.u, k.a, 0.0, 0.5 * k.c);
  j.d_beta = partial(k.u, 0.0, k.b, 0.5 * k.c);
  j.d_gamma = partial(-2.0 * k.rho * k.u, 0.0, 0.0, k.root_ab * k.sech2);
  j.d_t = (-k.u * tr.sinc_t) * Mat2::identity() + tr.cos_wt * gen;
  return j;
}

void check_pairs(const BandStack& bands, std::size_t n, const char* op) {
  if (n % 2 != 0) {
    throw std::invalid_argument(std::string(op) + ": odd vector length " + std::to_string(n));
  }
  if (n != 2 * bands.size()) {
    throw std::invalid_argument(std::string(op) + ": vector length " + std::to_string(n) +
                                " does not match " + std::to_string(bands.size()) + " bands");
  }
}

}  // namespace

double max_abs(const Mat2& m) {
  return std::max({std::abs(m.m00), std::abs(m.m01), std::abs(m.m10), std::abs(m.m11)});
}

HamiltonianBand HamiltonianBand::isotropic(double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("isotropic band: frequency must be positive");
  return {std::log(theta), std::log(theta), 0.0};
}

HamiltonianBand HamiltonianBand::from_coefficients(double a, double b, double c) {
  if (!(a > 0.0) || !(b > 0.0) || !(c * c < a * b)) {
    throw std::invalid_argument("band coefficients must satisfy a > 0, b > 0, c^2 < ab");
  }
  return {std::log(a), std::log(b), std::atanh(c / std::sqrt(a * b))};
}

double HamiltonianBand::a() const { return std::exp(alpha); }
double HamiltonianBand::b() const { return std::exp(beta); }
double HamiltonianBand::rho() const { return std::tanh(gamma); }
double HamiltonianBand::c() const { return coefficients(*this).c; }
double HamiltonianBand::omega_squared() const { return coefficients(*this).u; }
double HamiltonianBand::omega() const { return coefficients(*this).omega; }

double rotary_frequency(std::size_t band, std::size_t head_dim) {
  return std::pow(10000.0, -2.0 * static_cast<double>(band) / static_cast<double>(head_dim));
}

BandStack rotary_bands(std::size_t head_dim) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw std::invalid_argument("rotary_bands: head dimension must be positive and even");
  }
  BandStack bands;
  bands.reserve(head_dim / 2);
  for (std::size_t i = 0; i < head_dim / 2; ++i) {
    bands.push_back(HamiltonianBand::isotropic(rotary_frequency(i, head_dim)));
  }
  return bands;
}

Mat2 generator(const HamiltonianBand& band) { return generator_of(coefficients(band)); }

FlowMatrix flow_matrix(const HamiltonianBand& band, double t) {
  const Coefficients k = coefficients(band);
  return flow_of(k, trig(k, t));
}

FlowJacobian flow_jacobian(const HamiltonianBand& band, double t) {
  return jacobian_of(coefficients(band), t);
}

Mat2 expm_oracle(const Mat2& m, double t) {
  const Mat2 x = t * m;
  const double norm = std::max(std::abs(x.m00) + std::abs(x.m01), std::abs(x.m10) + std::abs(x.m11));
  int squarings = 0;
  double scaled_norm = norm;
  while (scaled_norm > 0.5) {
    scaled_norm *= 0.5;
    ++squarings;
  }
  const Mat2 y = std::ldexp(1.0, -squarings) * x;

  // Horner evaluation of sum_{j<=18} y^j / j!.
  constexpr int kDegree = 18;
  Mat2 acc = Mat2::identity();
  for (int j = kDegree; j >= 1; --j) {
    acc = Mat2::identity() + (1.0 / j) * (y * acc);
  }
  for (int i = 0; i < squarings; ++i) acc = acc * acc;
  return acc;
}

std::vector<double> apply_flow(const BandStack& bands, std::span<const double> v, double t) {
  check_pairs(bands, v.size(), "apply_flow");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const Mat2 s = flow_matrix(bands[i], t);
    const double x0 = v[2 * i];
    const double x1 = v[2 * i + 1];
    out[2 * i] = s.m00 * x0 + s.m01 * x1;
    out[2 * i + 1] = s.m10 * x0 + s.m11 * x1;
  }
  return out;
}

std::vector<double> conjugate_key_flow(const BandStack& bands, std::span<const double> k, double t) {
  check_pairs(bands, k.size(), "conjugate_key_flow");
  std::vector<double> out = apply_flow(bands, k, t);
  for (std::size_t i = 0; i < bands.size(); ++i) {
    // J (u0, u1) = (u1, -u0)
    const double u0 = out[2 * i];
    out[2 * i] = out[2 * i + 1];
    out[2 * i + 1] = -u0;
  }
  return out;
}

FlowMatrix rope_flow(double omega, double t) {
  if (!(omega > 0.0)) throw std::invalid_argument("rope_flow: frequency must be positive");
  const double c = std::cos(omega * t);
  const double s = std::sin(omega * t);
  return {c, s, -s, c};
}

Feasibility rope_feasibility_check(std::span<const double> tau, double omega0, double tol) {
  if (tau.size() < 2) throw std::invalid_argument("rope_feasibility_check: need at least two times");
  std::vector<double> increments(tau.size() - 1);
  for (std::size_t t = 0; t + 1 < tau.size(); ++t) {
    increments[t] = tau[t + 1] - tau[t];
    if (!(increments[t] > 0.0)) {
      throw std::invalid_argument("rope_feasibility_check: tau is not strictly increasing at t=" +
                                  std::to_string(t + 1));
    }
    if (!(std::abs(omega0 * increments[t]) < std::numbers::pi)) {
      throw std::invalid_argument("rope_feasibility_check: aliasing, |omega0 * dtau| >= pi at t=" +
                                  std::to_string(t + 1));
    }
  }
  for (std::size_t t = 0; t + 1 < increments.size(); ++t) {
    const double scale = std::max({1.0, std::abs(increments[t]), std::abs(increments[t + 1])});
    if (std::abs(increments[t + 1] - increments[t]) > tol * scale) {
      return Infeasible{t + 1, t + 2};
    }
  }
  return Feasible{omega0 * increments.front()};
}

numcore::Tensor symplectic_flow(const numcore::Tensor& x, const numcore::Tensor& clock,
                                const numcore::Tensor& alpha, const numcore::Tensor& beta,
                                const numcore::Tensor& gamma, FlowSide side) {
  using numcore::ShapeError;
  using numcore::shape_string;
  if (x.rank() != 2 || x.size(1) % 2 != 0) {
    throw ShapeError("symplectic_flow: input must be (N, even d_h), got " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size(0);
  const std::size_t nb = x.size(1) / 2;
  if (clock.numel() != rows) {
    throw ShapeError("symplectic_flow: clock " + shape_string(clock.shape()) +
                     " does not match input " + shape_string(x.shape()));
  }
  if (alpha.numel() != nb || beta.numel() != nb || gamma.numel() != nb) {
    throw ShapeError("symplectic_flow: band parameters " + shape_string(alpha.shape()) +
                     " do not match input " + shape_string(x.shape()));
  }

  std::vector<Coefficients> coef(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    coef[i] = coefficients({alpha.at(i), beta.at(i), gamma.at(i)});
  }
  const bool conjugate = side == FlowSide::key_conjugate;
  auto xv = x.values();
  auto tv = clock.values();
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t i = 0; i < nb; ++i) {
      const Mat2 s = flow_of(coef[i], trig(coef[i], tv[n]));
      const std::size_t p = n * 2 * nb + 2 * i;
      const double u0 = s.m00 * xv[p] + s.m01 * xv[p + 1];
      const double u1 = s.m10 * xv[p] + s.m11 * xv[p + 1];
      out[p] = conjugate ? u1 : u0;
      out[p + 1] = conjugate ? -u0 : u1;
    }
  }
  numcore::Tensor y(x.shape(), std::move(out));
  if (auto* tape = numcore::recording_tape({&x, &clock, &alpha, &beta, &gamma})) {
    y.set_requires_grad(true);
    tape->record(
        numcore::Primitive::symplectic_flow, {x, clock, alpha, beta, gamma}, y,
        [x, clock, alpha, beta, gamma, y, coef = std::move(coef), rows, nb, conjugate] {
          auto gy = y.grad();
          auto xv = x.values();
          auto tv = clock.values();
          const bool want_params = alpha.requires_grad() || beta.requires_grad() || gamma.requires_grad();
          const bool want_clock = clock.requires_grad();
          std::span<double> gx, gt, ga, gb, gg;
          if (x.requires_grad()) gx = numcore::grad_buffer(x);
          if (want_clock) gt = numcore::grad_buffer(clock);
          if (alpha.requires_grad()) ga = numcore::grad_buffer(alpha);
          if (beta.requires_grad()) gb = numcore::grad_buffer(beta);
          if (gamma.requires_grad()) gg = numcore::grad_buffer(gamma);
          auto contract = [](const Mat2& g, const Mat2& d) {
            return g.m00 * d.m00 + g.m01 * d.m01 + g.m10 * d.m10 + g.m11 * d.m11;
          };
          for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t i = 0; i < nb; ++i) {
              const std::size_t p = n * 2 * nb + 2 * i;
              // Gradient w.r.t. u = S x; the key side applies J^T to undo y = J u.
              const double g0 = conjugate ? -gy[p + 1] : gy[p];
              const double g1 = conjugate ? gy[p] : gy[p + 1];
              const double x0 = xv[p];
              const double x1 = xv[p + 1];
              if (!want_params && !want_clock) {
                const Mat2 s = flow_of(coef[i], trig(coef[i], tv[n]));
                gx[p] += s.m00 * g0 + s.m10 * g1;
                gx[p + 1] += s.m01 * g0 + s.m11 * g1;
                continue;
              }
              const FlowJacobian j = jacobian_of(coef[i], tv[n]);
              if (!gx.empty()) {
                gx[p] += j.value.m00 * g0 + j.value.m10 * g1;
                gx[p + 1] += j.value.m01 * g0 + j.value.m11 * g1;
              }
              const Mat2 gs{g0 * x0, g0 * x1, g1 * x0, g1 * x1};
              if (!ga.empty()) ga[i] += contract(gs, j.d_alpha);
              if (!gb.empty()) gb[i] += contract(gs, j.d_beta);
              if (!gg.empty()) gg[i] += contract(gs, j.d_gamma);
              if (!gt.empty()) gt[n] += contract(gs, j.d_t);
            }
          }
        });
  }
  return y;
}

}  // namespace stretchtime::sype
