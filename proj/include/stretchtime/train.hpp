#pragma once

// MSE training with AdamW, cosine annealing, gradient accumulation and
// early stopping on validation MSE.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "stretchtime/data.hpp"
#include "stretchtime/model.hpp"
#include "stretchtime/numcore.hpp"
#include "stretchtime/random.hpp"

namespace stretchtime::train {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t effective_batch = 32;
  std::size_t physical_batch = 8;
  std::size_t max_epochs = 10;
  std::size_t patience = 12;
  std::uint64_t seed = 2026;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_floor = -1.0;        // negative selects learning_rate / 100
  std::size_t total_steps = 0;   // 0 selects max_epochs * steps_per_epoch
  std::size_t train_stride = 1;  // window stride over the train segment
  std::size_t eval_stride = 1;   // window stride over val/test segments

  void validate() const;
  std::size_t accumulation() const { return effective_batch / physical_batch; }
  double resolved_lr_floor() const { return lr_floor < 0.0 ? learning_rate / 100.0 : lr_floor; }
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

double mse(const numcore::Tensor& pred, const numcore::Tensor& truth);
double mae(const numcore::Tensor& pred, const numcore::Tensor& truth);

// One decoupled-weight-decay Adam update at learning rate `lr` using the
// gradients currently held by `params`. A missing gradient counts as zero.
// Throws NumericError naming the first parameter with a non-finite gradient.
void adamw_step(const std::vector<model::NamedTensor>& params, OptimizerState& state,
                const TrainConfig& config, double lr);

// Cosine schedule from learning_rate down to the floor over `total` steps.
double cosine_lr(std::size_t step, std::size_t total, const TrainConfig& config);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

// Forecast metrics in standardized space over every window of a segment.
Metrics evaluate(const model::StretchTimeParams& params, const model::ModelConfig& config,
                 const data::SeriesDataset& dataset, data::SegmentKind segment, std::size_t stride = 1);
// Last-value persistence, computed without a model.
Metrics evaluate_persistence(const data::SeriesDataset& dataset, data::SegmentKind segment,
                             const data::WindowSpec& spec);

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;  // learning rate of the epoch's last step
};

void write_history_csv(const std::vector<HistoryRow>& history, std::ostream& out);

struct TrainResult {
  model::StretchTimeParams best;  // minimum validation MSE; the input params when no epoch ran
  std::size_t best_epoch = 0;     // 0 when no epoch ran
  std::vector<HistoryRow> history;
  std::size_t steps = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs one optimizer step over `batch` (sample indices into `windows`),
// split into micro-batches of physical_batch. Returns the batch mean loss.
// Dropout masks are drawn from `rng` sample by sample in batch order, so the
// split does not change what is computed.
double train_step(const std::vector<model::NamedTensor>& learnable, const model::StretchTimeParams& params,
                  const model::ModelConfig& config, const std::vector<data::Window>& windows,
                  const std::vector<std::size_t>& batch, OptimizerState& state,
                  const TrainConfig& train_config, double lr, Rng& rng);

using EpochCallback = std::function<void(const HistoryRow&)>;

// Trains `params` in place; the returned `best` is a separate copy.
TrainResult train_loop(model::StretchTimeParams& params, const model::ModelConfig& config,
                       const data::SeriesDataset& dataset, const TrainConfig& train_config,
                       const EpochCallback& on_epoch = {});

}  // namespace stretchtime::train
