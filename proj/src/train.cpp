#include "stretchtime/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <utility>

namespace stretchtime::train {

namespace nc = numcore;
using nc::Tensor;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw nc::ShapeError(std::string(op) + ": shape mismatch " + nc::shape_string(a.shape()) + " vs " +
                         nc::shape_string(b.shape()));
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

constexpr std::uint64_t kShuffleSalt = 0x5348;
constexpr std::uint64_t kMaskSalt = 0x4d41534b;

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (physical_batch == 0 || effective_batch == 0) bad("batch sizes must be >= 1");
  if (effective_batch % physical_batch != 0) {
    bad("effective_batch " + std::to_string(effective_batch) + " is not a multiple of physical_batch " +
        std::to_string(physical_batch));
  }
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0, 1)");
  if (!(eps > 0.0)) bad("eps must be > 0");
  if (resolved_lr_floor() > learning_rate) bad("lr_floor exceeds learning_rate");
  if (train_stride == 0 || eval_stride == 0) bad("strides must be >= 1");
}

double mse(const Tensor& pred, const Tensor& truth) {
  check_same_shape(pred, truth, "mse");
  const auto p = pred.values();
  const auto t = truth.values();
  if (p.empty()) throw nc::ShapeError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

double mae(const Tensor& pred, const Tensor& truth) {
  check_same_shape(pred, truth, "mae");
  const auto p = pred.values();
  const auto t = truth.values();
  if (p.empty()) throw nc::ShapeError("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

void adamw_step(const std::vector<model::NamedTensor>& params, OptimizerState& state,
                const TrainConfig& config, double lr) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw nc::ShapeError("adamw_step: optimizer state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (state.m[i].size() != t.numel()) {
      throw nc::ShapeError("adamw_step: optimizer state size mismatch for " + name);
    }
    if (t.has_grad()) {
      for (double g : t.grad()) {
        if (!std::isfinite(g)) throw nc::NumericError("adamw_step: non-finite gradient in " + name);
      }
    }
  }

  ++state.step;
  const double t_step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t_step);
  const double bc2 = 1.0 - std::pow(config.beta2, t_step);
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    const std::span<const double> grad = t.has_grad() ? t.grad() : std::span<const double>{};
    auto values = t.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      values[j] = values[j] * decay - lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, const TrainConfig& config) {
  const double floor = config.resolved_lr_floor();
  if (total == 0) return config.learning_rate;
  if (step >= total) return floor;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return floor + 0.5 * (config.learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

Metrics evaluate(const model::StretchTimeParams& params, const model::ModelConfig& config,
                 const data::SeriesDataset& dataset, data::SegmentKind segment, std::size_t stride) {
  const auto ws = data::windows(dataset, segment, {config.lookback, config.horizon, stride});
  nc::NoGradScope no_grad;
  Metrics out;
  for (const auto& w : ws) {
    const Tensor pred = model::forward(w.x, params, config);
    out.mse += mse(pred, w.y);
    out.mae += mae(pred, w.y);
  }
  out.windows = ws.size();
  out.mse /= static_cast<double>(ws.size());
  out.mae /= static_cast<double>(ws.size());
  return out;
}

Metrics evaluate_persistence(const data::SeriesDataset& dataset, data::SegmentKind segment,
                             const data::WindowSpec& spec) {
  const auto ws = data::windows(dataset, segment, spec);
  Metrics out;
  for (const auto& w : ws) {
    const std::size_t ch = w.x.size(1);
    const auto last = w.x.values().subspan((spec.lookback - 1) * ch, ch);
    std::vector<double> pred(spec.horizon * ch);
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      for (std::size_t c = 0; c < ch; ++c) pred[t * ch + c] = last[c];
    }
    const Tensor p({spec.horizon, ch}, std::move(pred));
    out.mse += mse(p, w.y);
    out.mae += mae(p, w.y);
  }
  out.windows = ws.size();
  out.mse /= static_cast<double>(ws.size());
  out.mae /= static_cast<double>(ws.size());
  return out;
}

void write_history_csv(const std::vector<HistoryRow>& history, std::ostream& out) {
  out << "epoch,train_loss,val_mse,val_mae,lr\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_mse, r.val_mae,
                  r.lr);
    out << buf;
  }
}

double train_step(const std::vector<model::NamedTensor>& learnable, const model::StretchTimeParams& params,
                  const model::ModelConfig& config, const std::vector<data::Window>& windows,
                  const std::vector<std::size_t>& batch, OptimizerState& state,
                  const TrainConfig& train_config, double lr, Rng& rng) {
  if (batch.empty() || batch.size() % train_config.physical_batch != 0) {
    throw std::invalid_argument("train_step: batch of " + std::to_string(batch.size()) +
                                " is not a positive multiple of physical_batch");
  }
  for (const auto& [name, t] : learnable) nc::clear_grad(t);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t begin = 0; begin < batch.size(); begin += train_config.physical_batch) {
    nc::Tape tape;
    nc::TapeScope scope(tape);
    Tensor sum;
    for (std::size_t i = begin; i < begin + train_config.physical_batch; ++i) {
      const data::Window& w = windows.at(batch[i]);
      const model::ForwardMasks masks = model::sample_masks(config, rng);
      const Tensor diff = nc::sub(model::forward(w.x, params, config, &masks), w.y);
      const Tensor sample_loss = nc::mean_all(nc::mul(diff, diff));
      sum = sum.defined() ? nc::add(sum, sample_loss) : sample_loss;
    }
    const Tensor loss = nc::scale(sum, inv_batch);
    const double value = loss.item();
    if (!std::isfinite(value)) throw DivergenceError("non-finite training loss");
    nc::backward(tape, loss);
    total += value;
  }
  adamw_step(learnable, state, train_config, lr);
  return total;
}

TrainResult train_loop(model::StretchTimeParams& params, const model::ModelConfig& config,
                       const data::SeriesDataset& dataset, const TrainConfig& train_config,
                       const EpochCallback& on_epoch) {
  config.validate();
  train_config.validate();
  TrainResult result;
  result.best = model::clone_params(params);
  if (train_config.max_epochs == 0) return result;

  const auto train_windows =
      data::windows(dataset, data::SegmentKind::train, {config.lookback, config.horizon, train_config.train_stride});
  const std::size_t steps_per_epoch = train_windows.size() / train_config.effective_batch;
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("train_loop: " + std::to_string(train_windows.size()) +
                                " training windows are fewer than effective_batch " +
                                std::to_string(train_config.effective_batch));
  }
  const std::size_t total_steps =
      train_config.total_steps ? train_config.total_steps : train_config.max_epochs * steps_per_epoch;

  const auto learnable = params.named_parameters(config);
  OptimizerState state;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const auto order = shuffled(train_windows.size(), derive_seed(train_config.seed, kShuffleSalt + epoch));
    Rng mask_rng(derive_seed(train_config.seed, kMaskSalt + epoch));
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(s * train_config.effective_batch);
      const std::vector<std::size_t> batch(first, first + static_cast<std::ptrdiff_t>(train_config.effective_batch));
      lr = cosine_lr(step, total_steps, train_config);
      try {
        loss_sum += train_step(learnable, params, config, train_windows, batch, state, train_config, lr, mask_rng);
      } catch (const DivergenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " step " + std::to_string(s + 1) + ": " + e.what());
      } catch (const nc::NumericError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " step " + std::to_string(s + 1) + ": " + e.what());
      } catch (const std::domain_error& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " step " + std::to_string(s + 1) + ": " + e.what());
      }
      ++step;
    }
    for (const auto& [name, t] : learnable) nc::clear_grad(t);

    Metrics val;
    try {
      val = evaluate(params, config, dataset, data::SegmentKind::val, train_config.eval_stride);
    } catch (const std::domain_error& e) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ": validation: " + e.what());
    }
    if (!std::isfinite(val.mse)) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite validation MSE");
    }
    HistoryRow row{epoch, loss_sum / static_cast<double>(steps_per_epoch), val.mse, val.mae, lr};
    result.history.push_back(row);
    result.steps = step;
    if (on_epoch) on_epoch(row);

    if (val.mse < best_val) {
      best_val = val.mse;
      result.best = model::clone_params(params);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= train_config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace stretchtime::train
