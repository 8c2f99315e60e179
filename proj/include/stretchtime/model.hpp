#pragma once

// StretchTime forecaster: last-value residual, channel-value tokenization,
// a stack of warped-clock encoder layers and a shared linear readout.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stretchtime/attention.hpp"
#include "stretchtime/numcore.hpp"
#include "stretchtime/random.hpp"

namespace stretchtime::model {

struct ModelConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t channels = 3;
  std::size_t d_model = 64;
  std::size_t d_global = 0;  // 0 selects d_model / 2
  std::size_t n_layers = 1;
  std::size_t n_heads = 4;
  attention::PeMode pe_mode = attention::PeMode::sype;
  attention::WarpMode warp_mode = attention::WarpMode::automatic;
  bool use_mlp = true;
  double dropout_rate = 0.1;
  double channel_dropout_min_keep = 0.5;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::size_t sequence_length() const { return lookback + horizon; }
  std::size_t global_width() const { return d_global ? d_global : d_model / 2; }
  std::size_t local_width() const { return d_model - global_width(); }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t ffn_width() const { return 4 * d_model; }
  bool learnable_bands() const { return pe_mode == attention::PeMode::sype; }
  bool adaptive_warp() const {
    return warp_mode == attention::WarpMode::adaptive ||
           (warp_mode == attention::WarpMode::automatic && pe_mode == attention::PeMode::sype);
  }
};

using NamedTensor = std::pair<std::string, numcore::Tensor>;

struct StretchTimeParams {
  numcore::Tensor global_proj;    // (d_global, C)
  numcore::Tensor channel_basis;  // (C, d_local)
  numcore::Tensor positions;      // (L + T, d_model)
  numcore::Tensor channel_embed;  // (C, d_model)
  std::vector<attention::EncoderLayerParams> layers;
  numcore::Tensor readout_w;  // (d_model, 1)
  numcore::Tensor readout_b;  // (1)

  // Learnable tensors in a fixed order. Frozen rotary bands and unused warp
  // parameters are excluded.
  std::vector<NamedTensor> named_parameters(const ModelConfig& config) const;
  // Every stored tensor, learnable or not, in a fixed order.
  std::vector<NamedTensor> named_tensors() const;
};

// GPT-2 style initialization: weights ~ N(0, 0.02), residual output
// projections scaled by 1 / sqrt(2 n_layers), LayerNorm gain 1 and bias 0.
// The readout starts at zero so an untrained model forecasts last-value
// persistence; warp and band parameters start at the identity clock and the
// rotary frequencies.
StretchTimeParams init_params(const ModelConfig& config, std::uint64_t seed);

// Overwrites every stored tensor with zeros (used by persistence checks).
void zero_params(StretchTimeParams& params);

// Deep copy: fresh buffers with the same values and grad flags.
StretchTimeParams clone_params(const StretchTimeParams& params);

struct Centered {
  numcore::Tensor diff;       // (L, C)
  numcore::Tensor reference;  // (1, C)
};
Centered center_last_value(const numcore::Tensor& x);

// Per-channel scales: kept channels get 1 / keep_ratio, dropped channels 0.
// Each channel is kept independently with probability keep_ratio.
std::vector<double> sample_channel_mask(std::size_t channels, double keep_ratio, Rng& rng);
numcore::Tensor apply_channel_mask(const numcore::Tensor& x, std::span<const double> channel_scale);
numcore::Tensor channel_dropout(const numcore::Tensor& x, double keep_ratio, Rng& rng);

// Tokens for target channel c over all L + T slots. Rows past the lookback
// see a zero (centered) input, so they carry only p_t + e_c.
numcore::Tensor tokenize(const numcore::Tensor& x_diff, std::size_t channel,
                         const StretchTimeParams& params, const ModelConfig& config);

struct ForwardMasks {
  std::vector<double> channel_scale;  // empty: no channel dropout
  // masks[c][l] for channel sequence c and layer l; empty: no dropout.
  std::vector<std::vector<attention::LayerMasks>> layers;
};

// Masks for one training sample: a keep ratio uniform on [min_keep, 1],
// channel keep decisions, then per-channel per-layer dropout masks.
ForwardMasks sample_masks(const ModelConfig& config, Rng& rng);

// Forecast (T, C) for a raw input window (L, C). Pass masks only in training.
numcore::Tensor forward(const numcore::Tensor& x, const StretchTimeParams& params,
                        const ModelConfig& config, const ForwardMasks* masks = nullptr);

std::size_t count_params(const ModelConfig& config);
std::size_t per_layer_params(const ModelConfig& config);

}  // namespace stretchtime::model
