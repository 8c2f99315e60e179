#include "stretchtime/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <ostream>
#include <variant>

#include "stretchtime/attention.hpp"
#include "stretchtime/data.hpp"
#include "stretchtime/model.hpp"
#include "stretchtime/random.hpp"
#include "stretchtime/sype.hpp"
#include "stretchtime/train.hpp"

namespace stretchtime::verify {

namespace nc = numcore;
using nc::Tensor;
using sype::HamiltonianBand;
using sype::Mat2;

namespace {

constexpr double kPi = std::numbers::pi;

CheckRow row(std::string name, std::size_t samples, double max_error, double threshold) {
  return {std::move(name), samples, max_error, threshold, max_error <= threshold};
}

HamiltonianBand random_band(Rng& rng) {
  return {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
}

Tensor random_tensor(nc::Shape shape, double sd, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(nc::element_count(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void randomize(const Tensor& t, double sd, Rng& rng) {
  Tensor handle = t;
  for (auto& x : handle.mutable_values()) x += rng.normal(0.0, sd);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

model::ModelConfig small_config(attention::PeMode pe) {
  model::ModelConfig c;
  c.lookback = 8;
  c.horizon = 4;
  c.channels = 2;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.pe_mode = pe;
  return c;
}

// Moves every parameter away from its structured initial value so that no
// gradient path is trivially zero.
void perturb(const model::StretchTimeParams& params, Rng& rng) {
  for (const auto& [name, t] : params.named_tensors()) {
    const bool warp = name.ends_with("warp_weight");
    const bool readout = name.starts_with("readout");
    randomize(t, readout ? 0.5 : warp ? 0.05 : 0.1, rng);
  }
}

// Phase difference wrapped to (-pi, pi].
double wrapped(double x) { return std::remainder(x, 2.0 * kPi); }

}  // namespace

CheckRow symplectic_conservation(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  const Mat2 j = Mat2::symplectic_form();
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    const Mat2 s = sype::flow_matrix(band, rng.uniform(-10.0, 10.0));
    err = std::max(err, sype::max_abs(s.transposed() * j * s - j));
  }
  return row("symplectic_conservation", samples, err, 1e-10);
}

CheckRow unit_determinant(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    err = std::max(err, std::abs(sype::flow_matrix(band, rng.uniform(-10.0, 10.0)).det() - 1.0));
  }
  return row("unit_determinant", samples, err, 1e-10);
}

CheckRow group_law(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    const double t = rng.uniform(-10.0, 10.0);
    const double u = rng.uniform(-10.0, 10.0);
    const Mat2 lhs = sype::flow_matrix(band, t) * sype::flow_matrix(band, u);
    err = std::max(err, sype::max_abs(lhs - sype::flow_matrix(band, t + u)));
  }
  return row("group_law", samples, err, 1e-9);
}

CheckRow group_inverse(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    const double t = rng.uniform(-10.0, 10.0);
    const Mat2 p = sype::flow_matrix(band, t) * sype::flow_matrix(band, -t);
    err = std::max(err, sype::max_abs(p - Mat2::identity()));
  }
  return row("group_inverse", samples, err, 1e-10);
}

CheckRow closed_form_vs_expm(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    // A fifth of the sample exercises the small-angle branch.
    const double phase = i % 5 == 0 ? rng.uniform(-1e-5, 1e-5) : rng.uniform(-10.0, 10.0);
    const double t = phase / band.omega();
    const Mat2 closed = sype::flow_matrix(band, t);
    const Mat2 oracle = sype::expm_oracle(sype::generator(band), t);
    err = std::max(err, sype::max_abs(closed - oracle));
  }
  return row("closed_form_vs_expm", samples, err, 1e-8);
}

CheckRow rope_reduction(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double omega = rng.uniform(0.01, 5.0);
    const double t = rng.uniform(-10.0, 10.0);
    const Mat2 flow = sype::flow_matrix(HamiltonianBand::from_coefficients(omega, omega, 0.0), t);
    const Mat2 rotation{std::cos(omega * t), std::sin(omega * t), -std::sin(omega * t), std::cos(omega * t)};
    err = std::max({err, sype::max_abs(flow - rotation), sype::max_abs(sype::rope_flow(omega, t) - rotation)});
  }
  return row("rope_reduction", samples, err, 1e-12);
}

CheckRow relative_score_identity(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const sype::BandStack bands{random_band(rng)};
    const double q[2] = {rng.normal(), rng.normal()};
    const double k[2] = {rng.normal(), rng.normal()};
    const double tm = rng.uniform(-10.0, 10.0);
    const double tn = rng.uniform(-10.0, 10.0);
    const auto sq = sype::apply_flow(bands, q, tm);
    const auto jsk = sype::conjugate_key_flow(bands, k, tn);
    const double lhs = sq[0] * jsk[0] + sq[1] * jsk[1];
    const Mat2 m = Mat2::symplectic_form() * sype::flow_matrix(bands[0], tn - tm);
    const double rhs = q[0] * (m.m00 * k[0] + m.m01 * k[1]) + q[1] * (m.m10 * k[0] + m.m11 * k[1]);
    err = std::max(err, std::abs(lhs - rhs));
  }
  return row("relative_score_identity", samples, err, 1e-10);
}

CheckRow score_clock_shift(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  constexpr std::size_t n = 6;
  constexpr std::size_t dh = 8;
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    attention::HeadParams head;
    head.alpha = random_tensor({dh / 2}, 1.0, rng);
    head.beta = random_tensor({dh / 2}, 1.0, rng);
    head.gamma = random_tensor({dh / 2}, 1.0, rng);
    const Tensor q = random_tensor({n, dh}, 1.0, rng);
    const Tensor k = random_tensor({n, dh}, 1.0, rng);
    std::vector<double> clock(n), shifted(n);
    double running = 0.0;
    const double shift = rng.uniform(-20.0, 20.0);
    for (std::size_t r = 0; r < n; ++r) {
      running += rng.uniform(0.1, 2.0);
      clock[r] = running;
      shifted[r] = running + shift;
    }
    const Tensor c0({n, 1}, clock);
    const Tensor c1({n, 1}, shifted);
    const Tensor s0 = attention::attention_scores(q, k, c0, c0, head, attention::PeMode::sype);
    const Tensor s1 = attention::attention_scores(q, k, c1, c1, head, attention::PeMode::sype);
    err = std::max(err, max_abs_diff(s0.values(), s1.values()));
  }
  return row("score_clock_shift_invariance", samples, err, 1e-10);
}

CheckRow feasibility_oracle(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  std::size_t disagreements = 0;
  std::size_t feasible_count = 0;
  std::size_t affine_count = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t n = 2 + rng.below(15);
    const bool force_affine = rng.uniform() < 0.5;
    const std::uint64_t max_inc = 1 + rng.below(8);
    std::vector<std::uint64_t> inc(n - 1);
    inc[0] = 1 + rng.below(max_inc);
    for (std::size_t i = 1; i < inc.size(); ++i) inc[i] = force_affine ? inc[0] : 1 + rng.below(max_inc);
    std::vector<double> tau(n);
    tau[0] = static_cast<double>(rng.below(21));
    for (std::size_t i = 1; i < n; ++i) tau[i] = tau[i - 1] + static_cast<double>(inc[i - 1]);
    const std::uint64_t largest = *std::max_element(inc.begin(), inc.end());
    const double omega0 = rng.uniform(0.05, 0.95) * kPi / static_cast<double>(largest);

    const bool affine = std::all_of(inc.begin(), inc.end(), [&](std::uint64_t d) { return d == inc[0]; });
    // All-pairs oracle: every lag has a single phase modulo 2 pi.
    bool oracle = true;
    for (std::size_t lag = 1; lag < n && oracle; ++lag) {
      const double ref = omega0 * (tau[lag] - tau[0]);
      for (std::size_t m = 1; m + lag < n; ++m) {
        if (std::abs(wrapped(omega0 * (tau[m + lag] - tau[m]) - ref)) > 1e-9) {
          oracle = false;
          break;
        }
      }
    }

    const auto verdict = sype::rope_feasibility_check(tau, omega0);
    const bool feasible = std::holds_alternative<sype::Feasible>(verdict);
    bool consistent = feasible == oracle && feasible == affine;
    if (feasible) {
      consistent = consistent &&
                   std::abs(std::get<sype::Feasible>(verdict).theta - omega0 * static_cast<double>(inc[0])) <= 1e-12;
    } else {
      const auto w = std::get<sype::Infeasible>(verdict);
      consistent = consistent && w.second == w.first + 1 && w.second <= inc.size() &&
                   inc[w.first - 1] != inc[w.second - 1];
      for (std::size_t i = 1; consistent && i < w.first; ++i) consistent = inc[i - 1] == inc[i];
    }
    disagreements += consistent ? 0 : 1;
    feasible_count += feasible ? 1 : 0;
    affine_count += affine ? 1 : 0;
  }
  const std::size_t count_gap = feasible_count > affine_count ? feasible_count - affine_count
                                                              : affine_count - feasible_count;
  return row("rope_feasibility_oracle", samples, static_cast<double>(disagreements + count_gap), 0.0);
}

CheckRow rope_basis_sign(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  double err = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double theta = rng.uniform(-kPi, kPi);
    const sype::BandStack bands{HamiltonianBand::isotropic(1.0)};
    const double k[2] = {1.0, 0.0};
    const auto jrk = sype::conjugate_key_flow(bands, k, theta);
    const double score = jrk[1];  // q = (0, 1)
    err = std::max(err, std::abs(score + std::cos(theta)));
  }
  return row("rope_basis_sign_is_minus_cos", samples, err, 1e-12);
}

CheckRow flow_parameter_gradients(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  constexpr double h = 1e-5;
  double err = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); };
  auto entries = [](const Mat2& m) { return std::array<double, 4>{m.m00, m.m01, m.m10, m.m11}; };
  for (std::size_t i = 0; i < samples; ++i) {
    const HamiltonianBand band = random_band(rng);
    const double t = (i % 4 == 0 ? rng.uniform(-1e-5, 1e-5) : rng.uniform(-10.0, 10.0)) / band.omega();
    const auto jac = sype::flow_jacobian(band, t);
    for (int p = 0; p < 4; ++p) {
      HamiltonianBand up = band, down = band;
      double tu = t, td = t;
      double HamiltonianBand::*field[3] = {&HamiltonianBand::alpha, &HamiltonianBand::beta, &HamiltonianBand::gamma};
      if (p < 3) {
        up.*field[p] += h;
        down.*field[p] -= h;
      } else {
        tu += h;
        td -= h;
      }
      const auto a = entries(sype::flow_matrix(up, tu));
      const auto b = entries(sype::flow_matrix(down, td));
      const Mat2& analytic = p == 0 ? jac.d_alpha : p == 1 ? jac.d_beta : p == 2 ? jac.d_gamma : jac.d_t;
      const auto exact = entries(analytic);
      for (int e = 0; e < 4; ++e) err = std::max(err, rel(exact[e], (a[e] - b[e]) / (2.0 * h)));
    }
  }
  return row("flow_parameter_gradients", samples, err, 1e-6);
}

CheckRow model_gradcheck(std::uint64_t seed, const std::string& pe_mode) {
  Rng rng(seed);
  const model::ModelConfig config = small_config(attention::parse_pe_mode(pe_mode));
  const model::StretchTimeParams params = model::init_params(config, seed);
  perturb(params, rng);
  const Tensor x = random_tensor({config.lookback, config.channels}, 1.0, rng);
  // Targets near the current forecast keep the loss O(1e-2): the rounding
  // noise of a central difference scales with the loss value, not with the
  // gradient being checked.
  Tensor y;
  {
    nc::NoGradScope no_grad;
    y = nc::add(model::forward(x, params, config),
                random_tensor({config.horizon, config.channels}, 0.1, rng));
  }
  std::vector<Tensor> learnable;
  for (const auto& [name, t] : params.named_parameters(config)) learnable.push_back(t);
  const auto result = nc::gradcheck(
      [&] {
        const Tensor d = nc::sub(model::forward(x, params, config), y);
        return nc::mean_all(nc::mul(d, d));
      },
      learnable, 1e-5);
  return row("model_gradcheck_" + pe_mode, result.coordinates_checked, result.max_rel_error, 1e-4);
}

CheckRow translation_equivariance(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  model::ModelConfig config = small_config(attention::PeMode::sype);
  config.lookback = 16;
  config.horizon = 8;
  config.channels = 3;
  config.d_model = 16;
  const model::StretchTimeParams params = model::init_params(config, seed);
  perturb(params, rng);
  nc::NoGradScope no_grad;
  double err = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Tensor x = random_tensor({config.lookback, config.channels}, 1.0, rng);
    std::vector<double> shift(config.channels);
    for (auto& v : shift) v = rng.uniform(-5.0, 5.0);
    const Tensor shift_row({1, config.channels}, shift);
    const Tensor lhs = model::forward(nc::add(x, shift_row), params, config);
    const Tensor rhs = nc::add(model::forward(x, params, config), shift_row);
    err = std::max(err, max_abs_diff(lhs.values(), rhs.values()));
  }
  return row("translation_equivariance", samples, err, 1e-8);
}

CheckRow adaptive_init_matches_static_clock(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  model::ModelConfig adaptive = small_config(attention::PeMode::sype);
  adaptive.n_layers = 2;
  model::ModelConfig fixed = adaptive;
  fixed.warp_mode = attention::WarpMode::identity;
  const model::StretchTimeParams params = model::init_params(adaptive, seed);
  randomize(params.readout_w, 0.5, rng);
  nc::NoGradScope no_grad;
  double err = 0.0;
  bool identical = true;
  for (std::size_t s = 0; s < samples; ++s) {
    const Tensor x = random_tensor({adaptive.lookback, adaptive.channels}, 1.0, rng);
    const Tensor a = model::forward(x, params, adaptive);
    const Tensor b = model::forward(x, params, fixed);
    err = std::max(err, max_abs_diff(a.values(), b.values()));
    identical = identical && std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
  }
  CheckRow r = row("adaptive_init_matches_static_clock", samples, err, 0.0);
  r.pass = r.pass && identical;
  return r;
}

CheckRow channel_dropout_expectation(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  model::ModelConfig config;
  config.dropout_rate = 0.0;
  std::vector<double> mean(config.channels, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto masks = model::sample_masks(config, rng);
    for (std::size_t c = 0; c < config.channels; ++c) {
      mean[c] += masks.channel_scale.empty() ? 1.0 : masks.channel_scale[c];
    }
  }
  double err = 0.0;
  for (double m : mean) err = std::max(err, std::abs(m / static_cast<double>(samples) - 1.0));
  return row("channel_dropout_expectation", samples, err, 0.01);
}

CheckRow accumulation_equivalence(std::uint64_t seed) {
  data::SyntheticConfig sc;
  sc.length = 400;
  sc.channels = 2;
  sc.seed = seed;
  const auto ds = data::split(data::generate_warped_seasonal(sc));
  model::ModelConfig config = small_config(attention::PeMode::sype);
  config.lookback = 16;
  config.horizon = 8;
  config.d_model = 16;
  const auto ws = data::windows(ds, data::SegmentKind::train, {config.lookback, config.horizon, 1});
  std::vector<std::size_t> batch(32);
  Rng pick(seed);
  for (auto& b : batch) b = pick.below(ws.size());

  const model::StretchTimeParams base = model::init_params(config, seed);
  perturb(base, pick);
  auto run = [&](std::size_t physical) {
    model::StretchTimeParams p = model::clone_params(base);
    train::TrainConfig tc;
    tc.effective_batch = 32;
    tc.physical_batch = physical;
    train::OptimizerState state;
    Rng rng(derive_seed(seed, 7));
    const double loss = train::train_step(p.named_parameters(config), p, config, ws, batch, state, tc,
                                          tc.learning_rate, rng);
    return std::pair{p, loss};
  };
  const auto [a, loss_a] = run(8);
  const auto [b, loss_b] = run(32);
  double err = std::abs(loss_a - loss_b);
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    err = std::max(err, max_abs_diff(ta[i].second.values(), tb[i].second.values()));
  }
  return row("accumulation_equivalence", 32, err, 1e-12);
}

std::vector<CheckRow> run_all(std::uint64_t seed) {
  std::vector<CheckRow> rows;
  std::uint64_t salt = 0;
  auto next = [&] { return derive_seed(seed, ++salt); };
  rows.push_back(symplectic_conservation(next()));
  rows.push_back(unit_determinant(next()));
  rows.push_back(group_law(next()));
  rows.push_back(group_inverse(next()));
  rows.push_back(closed_form_vs_expm(next()));
  rows.push_back(rope_reduction(next()));
  rows.push_back(relative_score_identity(next()));
  rows.push_back(score_clock_shift(next()));
  rows.push_back(feasibility_oracle(next()));
  rows.push_back(rope_basis_sign(next()));
  rows.push_back(flow_parameter_gradients(next()));
  for (const char* mode : {"sype", "rope", "none"}) rows.push_back(model_gradcheck(next(), mode));
  rows.push_back(translation_equivariance(next()));
  rows.push_back(adaptive_init_matches_static_clock(next()));
  rows.push_back(channel_dropout_expectation(next()));
  rows.push_back(accumulation_equivalence(next()));
  return rows;
}

void write_report(const std::vector<CheckRow>& rows, std::ostream& out) {
  out << "check,samples,max_error,threshold,pass\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.check << ',' << r.samples << ',';
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,", r.max_error, r.threshold);
    out << buf << (r.pass ? "true" : "false") << '\n';
  }
}

}  // namespace stretchtime::verify
