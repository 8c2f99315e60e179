#include <algorithm>
#include <cmath>

#include "stretchtime/numcore.hpp"

namespace stretchtime::numcore {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  NoGradScope no_grad;
  return loss().item();
}

}  // namespace

GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::span<const Tensor> params,
                          double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  for (const auto& p : params) {
    if (!p.requires_grad()) throw std::invalid_argument("gradcheck: parameter without requires_grad");
    clear_grad(p);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor value;
    {
      TapeScope scope(tape);
      value = loss();
    }
    backward(tape, value);
    for (const auto& p : params) {
      if (p.has_grad()) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        analytic.emplace_back(p.numel(), 0.0);
      }
    }
  }

  GradcheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor p = params[t];
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate(loss);
      values[i] = saved - step;
      const double down = evaluate(loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[t][i];
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        throw NumericError("gradcheck: non-finite value at tensor " + std::to_string(t) +
                           " coordinate " + std::to_string(i));
      }
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      const double err = std::abs(exact - numeric) / denom;
      ++result.coordinates_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.tensor_index = t;
        result.coordinate = i;
      }
    }
  }
  for (const auto& p : params) clear_grad(p);
  return result;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step) {
  Tensor x(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
  const Tensor params[] = {x};
  return gradcheck([&] { return fn(x); }, params, step).max_rel_error;
}

}  // namespace stretchtime::numcore
