#pragma once

// Self-check suite behind `stretchtime verify`: flow algebra, relative
// position identities, the RoPE feasibility oracle, gradients, model
// invariants and training plumbing.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stretchtime::verify {

struct CheckRow {
  std::string check;
  std::size_t samples = 0;
  double max_error = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

CheckRow symplectic_conservation(std::uint64_t seed, std::size_t samples = 1000);
CheckRow unit_determinant(std::uint64_t seed, std::size_t samples = 1000);
CheckRow group_law(std::uint64_t seed, std::size_t samples = 1000);
CheckRow group_inverse(std::uint64_t seed, std::size_t samples = 1000);
CheckRow closed_form_vs_expm(std::uint64_t seed, std::size_t samples = 1000);
CheckRow rope_reduction(std::uint64_t seed, std::size_t samples = 100);
CheckRow relative_score_identity(std::uint64_t seed, std::size_t samples = 1000);
CheckRow score_clock_shift(std::uint64_t seed, std::size_t samples = 100);
// Compares rope_feasibility_check against an all-pairs modular phase test on
// seeded integer clocks; max_error counts disagreements plus any mismatch
// between feasible and constant-increment counts.
CheckRow feasibility_oracle(std::uint64_t seed, std::size_t samples = 12000);
// Measured q^T J R(theta) k for q = (0, 1), k = (1, 0): passes when it equals
// -cos(theta), the value implied by J = [[0, 1], [-1, 0]].
CheckRow rope_basis_sign(std::uint64_t seed, std::size_t samples = 100);
CheckRow flow_parameter_gradients(std::uint64_t seed, std::size_t samples = 200);
// Full forecaster loss on a small model (C=2, L=8, T=4, d=8) per pe_mode.
CheckRow model_gradcheck(std::uint64_t seed, const std::string& pe_mode);
CheckRow translation_equivariance(std::uint64_t seed, std::size_t samples = 20);
CheckRow adaptive_init_matches_static_clock(std::uint64_t seed, std::size_t samples = 10);
CheckRow channel_dropout_expectation(std::uint64_t seed, std::size_t samples = 100000);
CheckRow accumulation_equivalence(std::uint64_t seed);

std::vector<CheckRow> run_all(std::uint64_t seed);

void write_report(const std::vector<CheckRow>& rows, std::ostream& out);

}  // namespace stretchtime::verify
