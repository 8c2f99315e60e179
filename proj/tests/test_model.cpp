#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "stretchtime/model.hpp"
#include "test_util.hpp"

using namespace stretchtime::model;
namespace nc = stretchtime::numcore;
using nc::Tensor;
using stretchtime::Rng;
using stretchtime::attention::PeMode;
using stretchtime::attention::WarpMode;
using testutil::random_tensor;

namespace {

ModelConfig small_config(PeMode pe = PeMode::sype) {
  ModelConfig c;
  c.lookback = 8;
  c.horizon = 4;
  c.channels = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.pe_mode = pe;
  return c;
}

// Moves every learnable tensor off its structured initialization.
void perturb(StretchTimeParams& p, const ModelConfig& config, Rng& rng, double sd = 0.1) {
  for (auto& [name, t] : p.named_parameters(config)) {
    Tensor h = t;
    for (auto& v : h.mutable_values()) v += rng.normal(0.0, sd);
  }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  auto bad = [](auto edit) {
    ModelConfig c;
    edit(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  bad([](ModelConfig& c) { c.d_model = 0; });
  bad([](ModelConfig& c) { c.n_layers = 0; });
  bad([](ModelConfig& c) { c.n_heads = 3; });
  bad([](ModelConfig& c) { c.d_model = 12, c.n_heads = 4; });  // odd head dim
  bad([](ModelConfig& c) { c.d_global = 64; });
  bad([](ModelConfig& c) { c.dropout_rate = 1.0; });
  bad([](ModelConfig& c) { c.channel_dropout_min_keep = 0.0; });
  EXPECT_THROW(count_params(ModelConfig{.d_model = 0}), std::invalid_argument);
}

TEST(ModelConfig, WarpModeResolution) {
  ModelConfig c;
  EXPECT_TRUE(c.adaptive_warp());
  c.pe_mode = PeMode::rope;
  EXPECT_FALSE(c.adaptive_warp());
  c.warp_mode = WarpMode::adaptive;
  EXPECT_TRUE(c.adaptive_warp());
  c.pe_mode = PeMode::sype;
  c.warp_mode = WarpMode::identity;
  EXPECT_FALSE(c.adaptive_warp());
}

TEST(CenterLastValue, HandValues) {
  const auto r = center_last_value(Tensor({3, 1}, {1, 2, 3}));
  EXPECT_EQ(std::vector<double>(r.diff.values().begin(), r.diff.values().end()), (std::vector<double>{-2, -1, 0}));
  EXPECT_EQ(r.reference.item(), 3.0);
  const auto flat = center_last_value(Tensor::full({5, 2}, 4.2));
  for (double v : flat.diff.values()) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  const auto x = random_tensor({7, 3}, rng);
  const auto d = center_last_value(x).diff;
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(d.at(6, c), 0.0);
  EXPECT_THROW(center_last_value(Tensor::zeros({0, 3})), nc::ShapeError);
}

TEST(ChannelDropout, KeepAllIsIdentity) {
  Rng rng(2), mask_rng(3);
  const auto x = random_tensor({5, 4}, rng);
  EXPECT_EQ(testutil::max_abs_diff(channel_dropout(x, 1.0, mask_rng), x), 0.0);
  EXPECT_THROW(channel_dropout(x, 0.0, mask_rng), std::invalid_argument);
  EXPECT_THROW(channel_dropout(x, 1.5, mask_rng), std::invalid_argument);
}

TEST(ChannelDropout, ExplicitMask) {
  Rng rng(4);
  const auto x = random_tensor({3, 4}, rng);
  const std::vector<double> scale{2.0, 0.0, 2.0, 0.0};
  const auto y = apply_channel_mask(x, scale);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at(r, 0), 2 * x.at(r, 0));
    EXPECT_EQ(y.at(r, 1), 0.0);
    EXPECT_EQ(y.at(r, 2), 2 * x.at(r, 2));
    EXPECT_EQ(y.at(r, 3), 0.0);
  }
}

TEST(ChannelDropout, MonteCarloExpectation) {
  Rng rng(5);
  const auto x = Tensor::matrix({{1.0, -2.0, 0.5}});
  for (double keep : {0.5, 0.8}) {
    std::vector<double> acc(3, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const auto scale = sample_channel_mask(3, keep, rng);
      for (int c = 0; c < 3; ++c) acc[c] += x.at(0, c) * scale[c];
    }
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(acc[c] / n, x.at(0, c), 0.01 * std::abs(x.at(0, c)));
  }
}

TEST(Tokenize, ZeroEverythingGivesZero) {
  auto config = small_config();
  auto p = init_params(config, 1);
  zero_params(p);
  const auto tokens = tokenize(Tensor::zeros({8, 2}), 1, p, config);
  ASSERT_EQ(tokens.shape(), (nc::Shape{12, 8}));
  for (double v : tokens.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tokenize, MatchesHandAssembly) {
  auto config = small_config();
  auto p = init_params(config, 2);
  Rng rng(3);
  perturb(p, config, rng, 0.5);
  const auto x = random_tensor({8, 2}, rng);
  const std::size_t ch = 1;
  const auto tokens = tokenize(x, ch, p, config);
  const std::size_t dg = config.global_width();
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t j = 0; j < 8; ++j) {
      double content = 0.0;
      if (t < 8) {
        if (j < dg) {
          for (std::size_t c = 0; c < 2; ++c) content += p.global_proj.at(j, c) * x.at(t, c);
        } else {
          content = x.at(t, ch) * p.channel_basis.at(ch, j - dg);
        }
      }
      EXPECT_NEAR(tokens.at(t, j), content + p.positions.at(t, j) + p.channel_embed.at(ch, j), 1e-15);
    }
  }
}

TEST(Tokenize, LinearInContentOnly) {
  auto config = small_config();
  auto p = init_params(config, 4);
  Rng rng(5);
  const auto x = random_tensor({8, 2}, rng);
  const auto t1 = tokenize(x, 0, p, config);
  const auto t2 = tokenize(nc::scale(x, 2.0), 0, p, config);
  const auto base = tokenize(Tensor::zeros({8, 2}), 0, p, config);
  // (t2 - base) = 2 (t1 - base)
  EXPECT_LE(testutil::max_abs_diff(nc::sub(t2, base), nc::scale(nc::sub(t1, base), 2.0)), 1e-15);
  for (std::size_t t = 8; t < 12; ++t)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(t1.at(t, j), base.at(t, j));
}

TEST(Forward, ZeroParamsIsPersistence) {
  for (auto pe : {PeMode::sype, PeMode::rope, PeMode::none}) {
    auto config = small_config(pe);
    auto p = init_params(config, 6);
    zero_params(p);
    Rng rng(7);
    const auto x = random_tensor({8, 2}, rng);
    const auto y = forward(x, p, config);
    ASSERT_EQ(y.shape(), (nc::Shape{4, 2}));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.at(t, c), x.at(7, c));
  }
}

TEST(Forward, FreshInitIsPersistence) {
  auto config = small_config();
  const auto p = init_params(config, 8);
  Rng rng(9);
  const auto x = random_tensor({8, 2}, rng);
  const auto y = forward(x, p, config);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.at(t, c), x.at(7, c));
}

TEST(Forward, TranslationEquivariance) {
  Rng rng(10);
  for (auto pe : {PeMode::sype, PeMode::rope, PeMode::none}) {
    auto config = small_config(pe);
    auto p = init_params(config, 11);
    perturb(p, config, rng, 0.3);
    for (int trial = 0; trial < 10; ++trial) {
      const auto x = random_tensor({8, 2}, rng);
      const Tensor kappa({2}, {rng.uniform(-100, 100), rng.uniform(-100, 100)});
      const auto lhs = forward(nc::add(x, kappa), p, config);
      const auto rhs = nc::add(forward(x, p, config), kappa);
      EXPECT_LE(testutil::max_abs_diff(lhs, rhs), 1e-8);
    }
  }
}

TEST(Forward, SypeAtInitMatchesStaticClockBitExactly) {
  auto config = small_config();
  config.n_layers = 2;
  auto p = init_params(config, 12);
  Rng rng(13);
  // Move everything except warp and bands, which stay at the identity.
  for (auto& [name, t] : p.named_parameters(config)) {
    if (name.find("warp") != std::string::npos || name.find("alpha") != std::string::npos ||
        name.find("beta") != std::string::npos || name.find("gamma") != std::string::npos)
      continue;
    Tensor h = t;
    for (auto& v : h.mutable_values()) v += rng.normal(0.0, 0.3);
  }
  auto ident = config;
  ident.warp_mode = WarpMode::identity;
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor({8, 2}, rng);
    EXPECT_TRUE(bit_equal(forward(x, p, config), forward(x, p, ident)));
  }
}

TEST(Forward, ZeroGlobalProjectionDecouplesChannels) {
  auto config = small_config();
  auto p = init_params(config, 14);
  Rng rng(15);
  perturb(p, config, rng, 0.3);
  const auto x = random_tensor({8, 2}, rng);
  auto x2v = std::vector<double>(x.values().begin(), x.values().end());
  for (std::size_t t = 0; t < 8; ++t) x2v[t * 2 + 1] += rng.normal();
  const Tensor x2({8, 2}, x2v);
  // Coupled: changing channel 1 moves channel 0's forecast.
  const auto a = forward(x, p, config), b = forward(x2, p, config);
  double moved = 0.0;
  for (std::size_t t = 0; t < 4; ++t) moved = std::max(moved, std::abs(a.at(t, 0) - b.at(t, 0)));
  EXPECT_GT(moved, 1e-6);
  for (auto& v : p.global_proj.mutable_values()) v = 0.0;
  const auto c = forward(x, p, config), d = forward(x2, p, config);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(c.at(t, 0), d.at(t, 0));
}

TEST(Forward, Deterministic) {
  auto config = small_config();
  const auto p1 = init_params(config, 16), p2 = init_params(config, 16);
  for (std::size_t i = 0; i < p1.named_tensors().size(); ++i)
    EXPECT_TRUE(bit_equal(p1.named_tensors()[i].second, p2.named_tensors()[i].second));
  Rng rng(17);
  auto p = clone_params(p1);
  perturb(p, config, rng);
  const auto x = random_tensor({8, 2}, rng);
  Rng m1(5), m2(5);
  const auto masks1 = sample_masks(config, m1), masks2 = sample_masks(config, m2);
  EXPECT_TRUE(bit_equal(forward(x, p, config, &masks1), forward(x, p, config, &masks2)));
}

TEST(Forward, WrongWindowShapeThrows) {
  auto config = small_config();
  const auto p = init_params(config, 18);
  EXPECT_THROW(forward(Tensor::zeros({7, 2}), p, config), nc::ShapeError);
  EXPECT_THROW(forward(Tensor::zeros({8, 3}), p, config), nc::ShapeError);
}

TEST(Forward, GradcheckAllModes) {
  for (auto pe : {PeMode::sype, PeMode::rope, PeMode::none}) {
    auto config = small_config(pe);
    config.dropout_rate = 0.0;
    auto p = init_params(config, 19);
    Rng rng(20);
    perturb(p, config, rng, 0.1);
    const auto x = random_tensor({8, 2}, rng);
    Tensor y;
    {
      nc::NoGradScope no_grad;
      y = nc::add(forward(x, p, config), random_tensor({4, 2}, rng, 0.1));
    }
    auto loss = [&] {
      const auto e = nc::sub(forward(x, p, config), y);
      return nc::mean_all(nc::mul(e, e));
    };
    std::vector<Tensor> params;
    for (auto& [name, t] : p.named_parameters(config)) params.push_back(t);
    const auto r = nc::gradcheck(loss, params, 1e-5);
    EXPECT_LE(r.max_rel_error, 1e-4) << stretchtime::attention::to_string(pe) << " tensor " << r.tensor_index;
  }
}

TEST(Params, FrozenBandsAndUnusedWarpExcluded) {
  auto sype = small_config(PeMode::sype);
  auto rope = small_config(PeMode::rope);
  const auto ps = init_params(sype, 1).named_parameters(sype);
  const auto pr = init_params(rope, 1).named_parameters(rope);
  auto names = [](const auto& list) {
    std::set<std::string> s;
    for (const auto& [n, t] : list) s.insert(n);
    return s;
  };
  const auto ns = names(ps), nr = names(pr);
  EXPECT_EQ(ns.size(), ps.size());
  for (const auto& n : nr) EXPECT_TRUE(ns.count(n)) << n;
  EXPECT_GT(ns.size(), nr.size());
  for (const auto& n : nr) {
    EXPECT_EQ(n.find("warp"), std::string::npos);
    EXPECT_EQ(n.find("alpha"), std::string::npos);
  }
}

TEST(Params, CountMatchesRegistry) {
  for (auto pe : {PeMode::sype, PeMode::rope, PeMode::none}) {
    for (bool mlp : {true, false}) {
      ModelConfig c;
      c.pe_mode = pe;
      c.use_mlp = mlp;
      std::size_t total = 0;
      for (const auto& [n, t] : init_params(c, 1).named_parameters(c)) total += t.numel();
      EXPECT_EQ(count_params(c), total);
    }
  }
}

TEST(Params, DefaultCountByHand) {
  // global 32*3, bases 3*32, positions 192*64, channel embeddings 3*64,
  // layer: ln1 128, QKV 3*64*64, W_O 64*64, warp 65, bands 4*3*8,
  // ln2 128, FFN 64*256 + 256 + 256*64 + 64, readout 65.
  const std::size_t layer = 128 + 12288 + 4096 + 65 + 96 + 128 + 16384 + 256 + 16384 + 64;
  EXPECT_EQ(count_params(ModelConfig{}), 96 + 96 + 12288 + 192 + layer + 65);
  EXPECT_EQ(count_params(ModelConfig{}), 62626u);
}

TEST(Params, LayersAddLinearly) {
  ModelConfig c;
  const std::size_t one = count_params(c);
  c.n_layers = 2;
  const std::size_t two = count_params(c);
  c.n_layers = 4;
  EXPECT_EQ(two - one, per_layer_params(c));
  EXPECT_EQ(count_params(c), one + 3 * per_layer_params(c));
}

TEST(Params, CloneIsIndependent) {
  auto config = small_config();
  auto p = init_params(config, 21);
  auto q = clone_params(p);
  const auto before = p.readout_b.item();
  for (auto& v : q.readout_b.mutable_values()) v += 1.0;
  EXPECT_EQ(p.readout_b.item(), before);
  EXPECT_EQ(q.readout_b.requires_grad(), p.readout_b.requires_grad());
}

TEST(Masks, ShapesFollowConfig) {
  auto config = small_config();
  config.n_layers = 2;
  Rng rng(22);
  const auto m = sample_masks(config, rng);
  ASSERT_EQ(m.layers.size(), 2u);
  ASSERT_EQ(m.layers[0].size(), 2u);
  EXPECT_EQ(m.layers[0][0].attention.shape(), (nc::Shape{12, 8}));
  EXPECT_EQ(m.layers[0][1].attention.shape(), (nc::Shape{4, 8}));
  config.dropout_rate = 0.0;
  config.channel_dropout_min_keep = 1.0;
  const auto off = sample_masks(config, rng);
  EXPECT_TRUE(off.layers.empty());
  EXPECT_TRUE(off.channel_scale.empty());
}
