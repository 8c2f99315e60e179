#pragma once

// Adaptive warp clock: per-token positive increments softplus(w . h_t + b)
// and their inclusive running sum.

#include <cstddef>

#include "stretchtime/numcore.hpp"

namespace stretchtime::warp {

struct WarpParams {
  numcore::Tensor weight;  // (d_model, 1)
  numcore::Tensor bias;    // (1)
};

struct WarpClock {
  numcore::Tensor increments;  // (N, 1)
  numcore::Tensor clock;       // (N, 1)
};

// The double closest to ln(e - 1) for which softplus returns exactly 1.0.
double unit_increment_bias();

// weight = 0, bias = unit_increment_bias(): the clock starts as 1, 2, ..., N.
WarpParams init_warp_params(std::size_t d_model);

numcore::Tensor warp_increments(const numcore::Tensor& tokens, const WarpParams& params);

// Throws std::domain_error if any increment is not strictly positive.
WarpClock warp_clock(const numcore::Tensor& increments);

WarpClock identity_clock(std::size_t n);

}  // namespace stretchtime::warp
