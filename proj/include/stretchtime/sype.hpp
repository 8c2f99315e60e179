#pragma once

// Symplectic flows on 2-D subspaces.
//
// Each band carries a symmetric positive-definite Hamiltonian
// K = [[a, c], [c, b]] and generates S(t) = exp(t J K) with
// J = [[0, 1], [-1, 0]]. The raw parameters (alpha, beta, gamma) map to
// a = e^alpha, b = e^beta, c = tanh(gamma) sqrt(ab), which keeps
// ab - c^2 > 0 for every finite input, so the flow is always oscillatory with
// frequency omega = sqrt(ab - c^2).

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "stretchtime/numcore.hpp"

namespace stretchtime::sype {

struct Mat2 {
  double m00 = 0.0, m01 = 0.0, m10 = 0.0, m11 = 0.0;

  static constexpr Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  // The standard symplectic form J.
  static constexpr Mat2 symplectic_form() { return {0.0, 1.0, -1.0, 0.0}; }

  constexpr Mat2 transposed() const { return {m00, m10, m01, m11}; }
  constexpr double det() const { return m00 * m11 - m01 * m10; }
  constexpr double trace() const { return m00 + m11; }

  friend constexpr Mat2 operator*(const Mat2& x, const Mat2& y) {
    return {x.m00 * y.m00 + x.m01 * y.m10, x.m00 * y.m01 + x.m01 * y.m11,
            x.m10 * y.m00 + x.m11 * y.m10, x.m10 * y.m01 + x.m11 * y.m11};
  }
  friend constexpr Mat2 operator+(const Mat2& x, const Mat2& y) {
    return {x.m00 + y.m00, x.m01 + y.m01, x.m10 + y.m10, x.m11 + y.m11};
  }
  friend constexpr Mat2 operator-(const Mat2& x, const Mat2& y) {
    return {x.m00 - y.m00, x.m01 - y.m01, x.m10 - y.m10, x.m11 - y.m11};
  }
  friend constexpr Mat2 operator*(double s, const Mat2& x) {
    return {s * x.m00, s * x.m01, s * x.m10, s * x.m11};
  }
};

double max_abs(const Mat2& m);

using FlowMatrix = Mat2;

struct HamiltonianBand {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  // Band with a = b = theta and c = 0, i.e. a rotation at frequency theta.
  static HamiltonianBand isotropic(double theta);
  // Inverse of the parameterization; requires a, b > 0 and c^2 < ab.
  static HamiltonianBand from_coefficients(double a, double b, double c);

  double a() const;
  double b() const;
  double rho() const;
  double c() const;
  double omega_squared() const;  // ab (1 - rho^2)
  double omega() const;
};

using BandStack = std::vector<HamiltonianBand>;

// Bands initialized on the rotary submanifold: band i has a = b = theta_i with
// theta_i = 10000^(-2i / head_dim).
BandStack rotary_bands(std::size_t head_dim);
double rotary_frequency(std::size_t band, std::size_t head_dim);

// A = J K = [[c, b], [-a, -c]].
Mat2 generator(const HamiltonianBand& band);

// Closed form S(t) = cos(wt) I + (sin(wt) / w) A. For |wt| < 1e-4 the factor
// sin(wt)/w is evaluated as t (1 - (wt)^2/6 + (wt)^4/120).
FlowMatrix flow_matrix(const HamiltonianBand& band, double t);

// S(t) together with its partial derivatives.
struct FlowJacobian {
  Mat2 value;
  Mat2 d_alpha;
  Mat2 d_beta;
  Mat2 d_gamma;
  Mat2 d_t;
};
FlowJacobian flow_jacobian(const HamiltonianBand& band, double t);

// exp(t M) by scaling and squaring of a degree-18 Taylor polynomial. Shares no
// code with the closed form.
Mat2 expm_oracle(const Mat2& m, double t);

// Blockwise S_i(t) v on consecutive pairs.
std::vector<double> apply_flow(const BandStack& bands, std::span<const double> v, double t);
// Blockwise J S_i(t) k on consecutive pairs.
std::vector<double> conjugate_key_flow(const BandStack& bands, std::span<const double> k, double t);

// [[cos wt, sin wt], [-sin wt, cos wt]].
FlowMatrix rope_flow(double omega, double t);

struct Feasible {
  double theta;
};
// 1-based indices (t, t + 1) of the first pair of consecutive increments
// dtau(t) != dtau(t + 1).
struct Infeasible {
  std::size_t first;
  std::size_t second;
};
using Feasibility = std::variant<Feasible, Infeasible>;

// Decides whether a single RoPE angle theta reproduces omega0 (tau(m) - tau(n))
// modulo 2 pi for all m, n. Requires strictly increasing tau and
// |omega0 dtau(t)| < pi; under that premise feasibility is equivalent to
// constant increments (compared with tolerance `tol`, relative to max(1, |dtau|)).
Feasibility rope_feasibility_check(std::span<const double> tau, double omega0, double tol = 1e-12);

enum class FlowSide { query, key_conjugate };

// Differentiable block-diagonal flow over a sequence.
//
// x: (N, d_h) rows; clock: N warped times; alpha/beta/gamma: d_h/2 band
// parameters each. Row n becomes S(clock[n]) x_n (query side) or
// J S(clock[n]) x_n (key side). Gradients flow to x, clock and the band
// parameters.
numcore::Tensor symplectic_flow(const numcore::Tensor& x, const numcore::Tensor& clock,
                                const numcore::Tensor& alpha, const numcore::Tensor& beta,
                                const numcore::Tensor& gamma, FlowSide side);

}  // namespace stretchtime::sype
