#include "stretchtime/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "stretchtime/sype.hpp"

namespace stretchtime::attention {

namespace nc = numcore;
using nc::Tensor;

std::string_view to_string(PeMode mode) {
  switch (mode) {
    case PeMode::sype: return "sype";
    case PeMode::rope: return "rope";
    case PeMode::none: return "none";
  }
  return "?";
}

std::string_view to_string(WarpMode mode) {
  switch (mode) {
    case WarpMode::automatic: return "auto";
    case WarpMode::adaptive: return "adaptive";
    case WarpMode::identity: return "identity";
  }
  return "?";
}

PeMode parse_pe_mode(std::string_view text) {
  if (text == "sype") return PeMode::sype;
  if (text == "rope") return PeMode::rope;
  if (text == "none") return PeMode::none;
  throw std::invalid_argument("unknown pe_mode '" + std::string(text) + "' (expected sype, rope, none)");
}

WarpMode parse_warp_mode(std::string_view text) {
  if (text == "auto") return WarpMode::automatic;
  if (text == "adaptive") return WarpMode::adaptive;
  if (text == "identity") return WarpMode::identity;
  throw std::invalid_argument("unknown warp_mode '" + std::string(text) +
                              "' (expected auto, adaptive, identity)");
}

Tensor attention_scores(const Tensor& q, const Tensor& k, const Tensor& q_clock,
                        const Tensor& k_clock, const HeadParams& head, PeMode mode) {
  if (q.rank() != 2 || k.rank() != 2 || q.size(1) != k.size(1)) {
    throw nc::ShapeError("attention_scores: incompatible query/key shapes " + nc::shape_string(q.shape()) +
                         " and " + nc::shape_string(k.shape()));
  }
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(q.size(1)));
  Tensor qr = q;
  Tensor kr = k;
  if (mode != PeMode::none) {
    const auto key_side = mode == PeMode::sype ? sype::FlowSide::key_conjugate : sype::FlowSide::query;
    qr = sype::symplectic_flow(q, q_clock, head.alpha, head.beta, head.gamma, sype::FlowSide::query);
    kr = sype::symplectic_flow(k, k_clock, head.alpha, head.beta, head.gamma, key_side);
  }
  return nc::matmul(nc::scale(qr, inv_sqrt_dh), nc::transpose(kr));
}

Tensor attention_scores(const Tensor& q, const Tensor& k, const warp::WarpClock& clock,
                        const HeadParams& head, PeMode mode) {
  return attention_scores(q, k, clock.clock, clock.clock, head, mode);
}

namespace {

Tensor head_output(const Tensor& queries_in, const Tensor& keys_in, const Tensor& q_clock,
                   const Tensor& k_clock, const HeadParams& head, PeMode mode) {
  const Tensor q = nc::matmul(queries_in, nc::transpose(head.w_q));
  const Tensor k = nc::matmul(keys_in, nc::transpose(head.w_k));
  const Tensor v = nc::matmul(keys_in, nc::transpose(head.w_v));
  const Tensor weights = nc::softmax(attention_scores(q, k, q_clock, k_clock, head, mode));
  return nc::matmul(weights, v);
}

}  // namespace

Tensor attention_head(const Tensor& tokens, const warp::WarpClock& clock, const HeadParams& head,
                      PeMode mode) {
  if (clock.clock.numel() != tokens.size(0)) {
    throw nc::ShapeError("attention_head: clock length does not match " + nc::shape_string(tokens.shape()));
  }
  return head_output(tokens, tokens, clock.clock, clock.clock, head, mode);
}

Tensor multi_head(const Tensor& tokens, const warp::WarpClock& clock,
                  const std::vector<HeadParams>& heads, const Tensor& w_o, PeMode mode,
                  std::size_t query_from) {
  if (heads.empty()) throw nc::ShapeError("multi_head: no heads");
  const std::size_t n = tokens.size(0);
  const std::size_t d_model = tokens.size(1);
  std::size_t width = 0;
  for (const auto& h : heads) width += h.head_dim();
  if (w_o.rank() != 2 || w_o.size(0) != d_model || w_o.size(1) != width) {
    throw nc::ShapeError("multi_head: output projection " + nc::shape_string(w_o.shape()) +
                         " does not match d_model " + std::to_string(d_model) + " and " +
                         std::to_string(width) + " concatenated head features");
  }
  if (clock.clock.numel() != n) {
    throw nc::ShapeError("multi_head: clock length does not match " + nc::shape_string(tokens.shape()));
  }
  if (query_from >= n) throw nc::ShapeError("multi_head: query_from beyond sequence");

  Tensor queries = tokens;
  Tensor q_clock = clock.clock;
  if (query_from > 0) {
    queries = nc::slice(tokens, 0, query_from, n);
    q_clock = nc::slice(clock.clock, 0, query_from, n);
  }
  std::vector<Tensor> outputs;
  outputs.reserve(heads.size());
  for (const auto& h : heads) {
    outputs.push_back(head_output(queries, tokens, q_clock, clock.clock, h, mode));
  }
  const Tensor joined = outputs.size() == 1 ? outputs.front() : nc::concat(outputs);
  return nc::matmul(joined, nc::transpose(w_o));
}

Tensor encoder_layer(const Tensor& tokens, const warp::WarpClock& clock,
                     const EncoderLayerParams& params, PeMode mode, bool use_mlp,
                     const LayerMasks* masks, std::size_t query_from) {
  const std::size_t n = tokens.size(0);
  const Tensor normed = nc::layer_norm(tokens, params.ln1_gain, params.ln1_bias);
  Tensor attn = multi_head(normed, clock, params.heads, params.w_o, mode, query_from);
  if (masks && masks->attention.defined()) attn = nc::masked_zero(attn, masks->attention);
  const Tensor residual = query_from > 0 ? nc::slice(tokens, 0, query_from, n) : tokens;
  Tensor x = nc::add(residual, attn);
  if (!use_mlp) return x;

  const Tensor h = nc::layer_norm(x, params.ln2_gain, params.ln2_bias);
  const Tensor hidden = nc::gelu(nc::add(nc::matmul(h, params.ffn_w1), params.ffn_b1));
  Tensor ffn = nc::add(nc::matmul(hidden, params.ffn_w2), params.ffn_b2);
  if (masks && masks->ffn.defined()) ffn = nc::masked_zero(ffn, masks->ffn);
  return nc::add(x, ffn);
}

}  // namespace stretchtime::attention
