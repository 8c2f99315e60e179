#include "stretchtime/model.hpp"

#include <cmath>
#include <stdexcept>

#include "stretchtime/sype.hpp"
#include "stretchtime/warp.hpp"

namespace stretchtime::model {

namespace nc = numcore;
using nc::Tensor;

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (lookback < 1) bad("lookback must be >= 1");
  if (horizon < 1) bad("horizon must be >= 1");
  if (channels < 1) bad("channels must be >= 1");
  if (d_model == 0) bad("d_model must be positive");
  if (n_layers == 0) bad("n_layers must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) bad("head dimension d_model / n_heads must be even");
  if (global_width() == 0 || global_width() >= d_model) bad("d_global must lie in (0, d_model)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) bad("dropout must lie in [0, 1)");
  if (!(channel_dropout_min_keep > 0.0 && channel_dropout_min_keep <= 1.0)) {
    bad("channel_dropout_min_keep must lie in (0, 1]");
  }
}

namespace {

Tensor normal_tensor(nc::Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(nc::element_count(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor band_tensor(const sype::BandStack& bands, double sype::HamiltonianBand::*field, bool learnable) {
  std::vector<double> v;
  v.reserve(bands.size());
  for (const auto& b : bands) v.push_back(b.*field);
  return Tensor({bands.size()}, std::move(v), learnable);
}

}  // namespace

StretchTimeParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  constexpr double kStd = 0.02;
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t c = config.channels;
  const std::size_t dh = config.head_dim();
  const double residual_std = kStd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  const bool learnable_bands = config.learnable_bands();

  StretchTimeParams p;
  p.global_proj = normal_tensor({config.global_width(), c}, kStd, rng);
  p.channel_basis = normal_tensor({c, config.local_width()}, kStd, rng);
  p.positions = normal_tensor({config.sequence_length(), d}, kStd, rng);
  p.channel_embed = normal_tensor({c, d}, kStd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    attention::EncoderLayerParams layer;
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.warp = warp::init_warp_params(d);
    const auto bands = sype::rotary_bands(dh);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      attention::HeadParams head;
      head.w_q = normal_tensor({dh, d}, kStd, rng);
      head.w_k = normal_tensor({dh, d}, kStd, rng);
      head.w_v = normal_tensor({dh, d}, kStd, rng);
      head.alpha = band_tensor(bands, &sype::HamiltonianBand::alpha, learnable_bands);
      head.beta = band_tensor(bands, &sype::HamiltonianBand::beta, learnable_bands);
      head.gamma = band_tensor(bands, &sype::HamiltonianBand::gamma, learnable_bands);
      layer.heads.push_back(std::move(head));
    }
    layer.w_o = normal_tensor({d, d}, residual_std, rng);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.ffn_w1 = normal_tensor({d, config.ffn_width()}, kStd, rng);
    layer.ffn_b1 = Tensor::zeros({config.ffn_width()}, true);
    layer.ffn_w2 = normal_tensor({config.ffn_width(), d}, residual_std, rng);
    layer.ffn_b2 = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(layer));
  }
  p.readout_w = Tensor::zeros({d, 1}, true);
  p.readout_b = Tensor::zeros({1}, true);
  return p;
}

std::vector<NamedTensor> StretchTimeParams::named_tensors() const {
  std::vector<NamedTensor> out{{"global_proj", global_proj},
                               {"channel_basis", channel_basis},
                               {"positions", positions},
                               {"channel_embed", channel_embed}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1_gain", layer.ln1_gain);
    out.emplace_back(pre + "ln1_bias", layer.ln1_bias);
    out.emplace_back(pre + "warp_weight", layer.warp.weight);
    out.emplace_back(pre + "warp_bias", layer.warp.bias);
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto& head = layer.heads[h];
      const std::string hp = pre + "head" + std::to_string(h) + ".";
      out.emplace_back(hp + "w_q", head.w_q);
      out.emplace_back(hp + "w_k", head.w_k);
      out.emplace_back(hp + "w_v", head.w_v);
      out.emplace_back(hp + "alpha", head.alpha);
      out.emplace_back(hp + "beta", head.beta);
      out.emplace_back(hp + "gamma", head.gamma);
    }
    out.emplace_back(pre + "w_o", layer.w_o);
    out.emplace_back(pre + "ln2_gain", layer.ln2_gain);
    out.emplace_back(pre + "ln2_bias", layer.ln2_bias);
    out.emplace_back(pre + "ffn_w1", layer.ffn_w1);
    out.emplace_back(pre + "ffn_b1", layer.ffn_b1);
    out.emplace_back(pre + "ffn_w2", layer.ffn_w2);
    out.emplace_back(pre + "ffn_b2", layer.ffn_b2);
  }
  out.emplace_back("readout_w", readout_w);
  out.emplace_back("readout_b", readout_b);
  return out;
}

std::vector<NamedTensor> StretchTimeParams::named_parameters(const ModelConfig& config) const {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : named_tensors()) {
    const bool is_band = name.ends_with(".alpha") || name.ends_with(".beta") || name.ends_with(".gamma");
    const bool is_warp = name.ends_with(".warp_weight") || name.ends_with(".warp_bias");
    const bool is_ffn = name.find(".ffn_") != std::string::npos || name.find(".ln2_") != std::string::npos;
    if (is_band && !config.learnable_bands()) continue;
    if (is_warp && !config.adaptive_warp()) continue;
    if (is_ffn && !config.use_mlp) continue;
    out.emplace_back(name, t);
  }
  return out;
}

void zero_params(StretchTimeParams& params) {
  for (auto& [name, t] : params.named_tensors()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v = 0.0;
  }
}

StretchTimeParams clone_params(const StretchTimeParams& params) {
  const auto copy = [](Tensor& t) {
    if (t.defined()) t = Tensor(t.shape(), {t.values().begin(), t.values().end()}, t.requires_grad());
  };
  StretchTimeParams out = params;
  copy(out.global_proj);
  copy(out.channel_basis);
  copy(out.positions);
  copy(out.channel_embed);
  for (auto& layer : out.layers) {
    for (Tensor* t : {&layer.ln1_gain, &layer.ln1_bias, &layer.warp.weight, &layer.warp.bias, &layer.w_o,
                      &layer.ln2_gain, &layer.ln2_bias, &layer.ffn_w1, &layer.ffn_b1, &layer.ffn_w2,
                      &layer.ffn_b2}) {
      copy(*t);
    }
    for (auto& head : layer.heads) {
      for (Tensor* t : {&head.w_q, &head.w_k, &head.w_v, &head.alpha, &head.beta, &head.gamma}) copy(*t);
    }
  }
  copy(out.readout_w);
  copy(out.readout_b);
  return out;
}

Centered center_last_value(const Tensor& x) {
  if (x.rank() != 2 || x.size(0) == 0 || x.size(1) == 0) {
    throw nc::ShapeError("center_last_value: expected a non-empty (L, C) window, got " +
                         nc::shape_string(x.shape()));
  }
  const std::size_t len = x.size(0);
  const Tensor reference = nc::slice(x, 0, len - 1, len);
  return {nc::sub(x, reference), reference};
}

std::vector<double> sample_channel_mask(std::size_t channels, double keep_ratio, Rng& rng) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw std::invalid_argument("channel_dropout: keep ratio must lie in (0, 1], got " +
                                std::to_string(keep_ratio));
  }
  std::vector<double> scale(channels);
  for (auto& s : scale) s = rng.uniform() < keep_ratio ? 1.0 / keep_ratio : 0.0;
  return scale;
}

Tensor apply_channel_mask(const Tensor& x, std::span<const double> channel_scale) {
  if (x.rank() != 2 || x.size(1) != channel_scale.size()) {
    throw nc::ShapeError("channel_dropout: mask of " + std::to_string(channel_scale.size()) +
                         " channels does not match " + nc::shape_string(x.shape()));
  }
  const Tensor mask({channel_scale.size()}, {channel_scale.begin(), channel_scale.end()});
  return nc::masked_zero(x, mask);
}

Tensor channel_dropout(const Tensor& x, double keep_ratio, Rng& rng) {
  if (x.rank() != 2) throw nc::ShapeError("channel_dropout: expected (L, C), got " + nc::shape_string(x.shape()));
  const auto scale = sample_channel_mask(x.size(1), keep_ratio, rng);
  return apply_channel_mask(x, scale);
}

namespace {

// Zero-padded copy of the centered window spanning all L + T slots.
Tensor pad_future(const Tensor& x_diff, std::size_t total_rows) {
  const std::size_t ch = x_diff.size(1);
  std::vector<double> padded(total_rows * ch, 0.0);
  std::copy(x_diff.values().begin(), x_diff.values().end(), padded.begin());
  return Tensor({total_rows, ch}, std::move(padded));
}

Tensor column(const Tensor& m, std::size_t c) {
  const std::size_t rows = m.size(0);
  const std::size_t cols = m.size(1);
  std::vector<double> v(rows);
  for (std::size_t r = 0; r < rows; ++r) v[r] = m.values()[r * cols + c];
  return Tensor({rows, 1}, std::move(v));
}

Tensor tokenize_padded(const Tensor& padded, const Tensor& global, std::size_t channel,
                       const StretchTimeParams& params) {
  const Tensor local = nc::matmul(column(padded, channel), nc::embedding(params.channel_basis, {channel}));
  const Tensor content = nc::concat({global, local});
  return nc::add(nc::add(content, params.positions), nc::embedding(params.channel_embed, {channel}));
}

void check_window(const Tensor& x, const ModelConfig& config, const char* op) {
  if (x.rank() != 2 || x.size(0) != config.lookback || x.size(1) != config.channels) {
    throw nc::ShapeError(std::string(op) + ": expected window (" + std::to_string(config.lookback) + "," +
                         std::to_string(config.channels) + "), got " + nc::shape_string(x.shape()));
  }
}

}  // namespace

Tensor tokenize(const Tensor& x_diff, std::size_t channel, const StretchTimeParams& params,
                const ModelConfig& config) {
  check_window(x_diff, config, "tokenize");
  if (channel >= config.channels) throw std::out_of_range("tokenize: channel index out of range");
  const Tensor padded = pad_future(x_diff.detach(), config.sequence_length());
  const Tensor global = nc::matmul(padded, nc::transpose(params.global_proj));
  return tokenize_padded(padded, global, channel, params);
}

ForwardMasks sample_masks(const ModelConfig& config, Rng& rng) {
  ForwardMasks masks;
  const double keep = config.channel_dropout_min_keep >= 1.0
                          ? 1.0
                          : rng.uniform(config.channel_dropout_min_keep, 1.0);
  if (keep < 1.0) masks.channel_scale = sample_channel_mask(config.channels, keep, rng);
  if (config.dropout_rate > 0.0) {
    const double keep_unit = 1.0 - config.dropout_rate;
    const std::size_t n = config.sequence_length();
    auto draw = [&](std::size_t rows) {
      std::vector<double> v(rows * config.d_model);
      for (auto& x : v) x = rng.uniform() < config.dropout_rate ? 0.0 : 1.0 / keep_unit;
      return Tensor({rows, config.d_model}, std::move(v));
    };
    masks.layers.resize(config.channels);
    for (std::size_t c = 0; c < config.channels; ++c) {
      for (std::size_t l = 0; l < config.n_layers; ++l) {
        // The final layer only produces the horizon rows.
        const std::size_t rows = l + 1 == config.n_layers ? config.horizon : n;
        attention::LayerMasks lm;
        lm.attention = draw(rows);
        if (config.use_mlp) lm.ffn = draw(rows);
        masks.layers[c].push_back(std::move(lm));
      }
    }
  }
  return masks;
}

Tensor forward(const Tensor& x, const StretchTimeParams& params, const ModelConfig& config,
               const ForwardMasks* masks) {
  check_window(x, config, "forward");
  const Centered centered = center_last_value(x.detach());
  Tensor x_diff = centered.diff;
  if (masks && !masks->channel_scale.empty()) x_diff = apply_channel_mask(x_diff, masks->channel_scale);

  const std::size_t n = config.sequence_length();
  const Tensor padded = pad_future(x_diff, n);
  const Tensor global = nc::matmul(padded, nc::transpose(params.global_proj));
  const warp::WarpClock static_clock = warp::identity_clock(n);

  std::vector<Tensor> columns;
  columns.reserve(config.channels);
  for (std::size_t c = 0; c < config.channels; ++c) {
    Tensor h = tokenize_padded(padded, global, c, params);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const auto& layer = params.layers[l];
      const warp::WarpClock clock =
          config.adaptive_warp() ? warp::warp_clock(warp::warp_increments(h, layer.warp)) : static_clock;
      const attention::LayerMasks* lm = nullptr;
      if (masks && !masks->layers.empty()) lm = &masks->layers[c][l];
      const std::size_t query_from = l + 1 == config.n_layers ? config.lookback : 0;
      h = attention::encoder_layer(h, clock, layer, config.pe_mode, config.use_mlp, lm, query_from);
    }
    columns.push_back(nc::add(nc::matmul(h, params.readout_w), params.readout_b));
  }
  const Tensor increments = columns.size() == 1 ? columns.front() : nc::concat(columns);
  return nc::add(increments, centered.reference);
}

std::size_t per_layer_params(const ModelConfig& config) {
  const std::size_t d = config.d_model;
  std::size_t count = 2 * d;      // ln1
  count += 3 * d * d;             // W_Q, W_K, W_V over all heads
  count += d * d;                 // W_O
  if (config.adaptive_warp()) count += d + 1;
  if (config.learnable_bands()) count += config.n_heads * 3 * (config.head_dim() / 2);
  if (config.use_mlp) {
    const std::size_t f = config.ffn_width();
    count += 2 * d + d * f + f + f * d + d;  // ln2, W1, b1, W2, b2
  }
  return count;
}

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t c = config.channels;
  std::size_t count = config.global_width() * c;  // global projection
  count += c * config.local_width();               // channel bases
  count += config.sequence_length() * d;           // absolute positions
  count += c * d;                                   // channel embeddings
  count += config.n_layers * per_layer_params(config);
  count += d + 1;  // readout
  return count;
}

}  // namespace stretchtime::model
