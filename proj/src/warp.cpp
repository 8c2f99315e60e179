#include "stretchtime/warp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stretchtime::warp {

using numcore::Tensor;

double unit_increment_bias() {
  const double nominal = std::log(std::expm1(1.0));
  if (numcore::softplus_value(nominal) == 1.0) return nominal;
  double below = nominal;
  double above = nominal;
  for (int step = 0; step < 16; ++step) {
    below = std::nextafter(below, -INFINITY);
    above = std::nextafter(above, INFINITY);
    if (numcore::softplus_value(below) == 1.0) return below;
    if (numcore::softplus_value(above) == 1.0) return above;
  }
  return nominal;
}

WarpParams init_warp_params(std::size_t d_model) {
  return {Tensor::zeros({d_model, 1}, true), Tensor::full({1}, unit_increment_bias(), true)};
}

Tensor warp_increments(const Tensor& tokens, const WarpParams& params) {
  return numcore::softplus(numcore::add(numcore::matmul(tokens, params.weight), params.bias));
}

WarpClock warp_clock(const Tensor& increments) {
  auto v = increments.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw std::domain_error("warp_clock: non-positive increment " + std::to_string(v[i]) +
                              " at position " + std::to_string(i));
    }
  }
  std::size_t axis = 0;
  return {increments, numcore::cumsum(increments, axis)};
}

WarpClock identity_clock(std::size_t n) {
  if (n == 0) throw std::invalid_argument("identity_clock: length must be at least 1");
  std::vector<double> clock(n);
  for (std::size_t i = 0; i < n; ++i) clock[i] = static_cast<double>(i + 1);
  return {Tensor::full({n, 1}, 1.0), Tensor({n, 1}, std::move(clock))};
}

}  // namespace stretchtime::warp
