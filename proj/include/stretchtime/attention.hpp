#pragma once

// Attention heads with pluggable positional mechanisms and the pre-norm
// encoder layer built on them.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stretchtime/numcore.hpp"
#include "stretchtime/warp.hpp"

namespace stretchtime::attention {

enum class PeMode { sype, rope, none };
// `automatic` warps the clock only under sype: rope and none then match a
// standard index-clock transformer.
enum class WarpMode { automatic, adaptive, identity };

std::string_view to_string(PeMode mode);
std::string_view to_string(WarpMode mode);
PeMode parse_pe_mode(std::string_view text);
WarpMode parse_warp_mode(std::string_view text);

struct PositionalMode {
  PeMode pe = PeMode::sype;
  WarpMode warp = WarpMode::adaptive;
};

struct HeadParams {
  numcore::Tensor w_q;  // (d_h, d_model)
  numcore::Tensor w_k;
  numcore::Tensor w_v;
  // Band parameters, (d_h / 2) each. Learnable in sype mode; frozen at the
  // rotary frequencies in rope mode; unused in none mode.
  numcore::Tensor alpha;
  numcore::Tensor beta;
  numcore::Tensor gamma;

  std::size_t head_dim() const { return w_q.size(0); }
};

struct EncoderLayerParams {
  numcore::Tensor ln1_gain, ln1_bias;  // (d_model)
  warp::WarpParams warp;
  std::vector<HeadParams> heads;
  numcore::Tensor w_o;                 // (d_model, n_heads * d_h)
  numcore::Tensor ln2_gain, ln2_bias;  // (d_model)
  numcore::Tensor ffn_w1;              // (d_model, 4 d_model)
  numcore::Tensor ffn_b1;              // (4 d_model)
  numcore::Tensor ffn_w2;              // (4 d_model, d_model)
  numcore::Tensor ffn_b2;              // (d_model)
};

// Pre-sampled dropout masks for the two sublayer outputs; entries are 0 or
// 1 / (1 - rate). Undefined tensors disable dropout.
struct LayerMasks {
  numcore::Tensor attention;
  numcore::Tensor ffn;
};

// Scores s_{m,n} for queries at clock times `q_clock` against keys at
// `k_clock`, scaled by 1 / sqrt(d_h).
numcore::Tensor attention_scores(const numcore::Tensor& q, const numcore::Tensor& k,
                                 const numcore::Tensor& q_clock, const numcore::Tensor& k_clock,
                                 const HeadParams& head, PeMode mode);
numcore::Tensor attention_scores(const numcore::Tensor& q, const numcore::Tensor& k,
                                 const warp::WarpClock& clock, const HeadParams& head, PeMode mode);

numcore::Tensor attention_head(const numcore::Tensor& tokens, const warp::WarpClock& clock,
                               const HeadParams& head, PeMode mode);

// Heads attend from rows [query_from, N) of `tokens` to all N rows.
numcore::Tensor multi_head(const numcore::Tensor& tokens, const warp::WarpClock& clock,
                           const std::vector<HeadParams>& heads, const numcore::Tensor& w_o,
                           PeMode mode, std::size_t query_from = 0);

// x + MHA(LN(x)), then x + FFN(LN(x)) when use_mlp. Only rows
// [query_from, N) are produced; keys and values always span all rows, so a
// final layer may skip rows nobody reads.
numcore::Tensor encoder_layer(const numcore::Tensor& tokens, const warp::WarpClock& clock,
                              const EncoderLayerParams& params, PeMode mode, bool use_mlp,
                              const LayerMasks* masks = nullptr, std::size_t query_from = 0);

}  // namespace stretchtime::attention
