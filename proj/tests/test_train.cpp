#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "stretchtime/train.hpp"
#include "test_util.hpp"

using namespace stretchtime::train;
namespace nc = stretchtime::numcore;
namespace model = stretchtime::model;
namespace data = stretchtime::data;
using nc::Tensor;
using stretchtime::Rng;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.lookback = 16;
  c.horizon = 8;
  c.channels = 2;
  c.d_model = 8;
  c.n_heads = 2;
  return c;
}

const data::SeriesDataset& tiny_data() {
  static const data::SeriesDataset ds = [] {
    data::SyntheticConfig s;
    s.length = 400;
    s.channels = 2;
    return data::split(data::generate_warped_seasonal(s), {}, 24);
  }();
  return ds;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.max_epochs = 3;
  t.train_stride = 4;
  t.effective_batch = 16;
  t.physical_batch = 4;
  return t;
}

bool same_params(const model::StretchTimeParams& a, const model::StretchTimeParams& b) {
  const auto ta = a.named_tensors(), tb = b.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const auto& x = ta[i].second;
    const auto& y = tb[i].second;
    if (std::memcmp(x.values().data(), y.values().data(), x.numel() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Metrics, HandValues) {
  const Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(mse(t, t), 0.0);
  EXPECT_EQ(mae(t, t), 0.0);
  const Tensor shifted = Tensor::matrix({{3, 4}, {5, 6}});
  EXPECT_EQ(mse(shifted, t), 4.0);
  EXPECT_EQ(mae(shifted, t), 2.0);
  EXPECT_EQ(mse(Tensor({2}, {1, -1}), Tensor::zeros({2})), 1.0);
  EXPECT_EQ(mae(Tensor({2}, {1, -1}), Tensor::zeros({2})), 1.0);
  EXPECT_THROW(mse(t, Tensor::zeros({2, 3})), nc::ShapeError);
  EXPECT_THROW(mae(t, Tensor::zeros({4})), nc::ShapeError);
}

TEST(AdamW, ZeroGradientNoDecayIsNoop) {
  TrainConfig c;
  c.weight_decay = 0.0;
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  OptimizerState s;
  adamw_step({{"p", p}}, s, c, 1e-3);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), -2.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamW, FirstStepByHand) {
  TrainConfig c;
  c.weight_decay = 0.0;
  Tensor p({1}, {1.0}, true);
  nc::grad_buffer(p)[0] = 1.0;
  OptimizerState s;
  adamw_step({{"p", p}}, s, c, 1e-3);
  // m_hat = 1, v_hat = 1.
  EXPECT_NEAR(p.item(), 1.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.item(), 0.999, 1e-10);
}

TEST(AdamW, DecoupledDecay) {
  TrainConfig c;
  c.weight_decay = 0.1;
  Tensor p({2}, {2.0, -3.0}, true);
  OptimizerState s;
  adamw_step({{"p", p}}, s, c, 1e-3);
  EXPECT_NEAR(p.at(0), 2.0 * (1 - 1e-4), 1e-15);
  EXPECT_NEAR(p.at(1), -3.0 * (1 - 1e-4), 1e-15);
}

TEST(AdamW, MultiStepOracle) {
  TrainConfig c;
  Tensor p({2}, {0.3, -0.7}, true);
  OptimizerState s;
  double theta[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
  const double grads[3][2] = {{0.5, -1.0}, {0.2, 0.0}, {-0.4, 2.0}};
  for (int k = 0; k < 3; ++k) {
    nc::clear_grad(p);
    for (int j = 0; j < 2; ++j) nc::grad_buffer(p)[j] = grads[k][j];
    adamw_step({{"p", p}}, s, c, 0.01);
    for (int j = 0; j < 2; ++j) {
      m[j] = 0.9 * m[j] + 0.1 * grads[k][j];
      v[j] = 0.999 * v[j] + 0.001 * grads[k][j] * grads[k][j];
      const double mh = m[j] / (1 - std::pow(0.9, k + 1)), vh = v[j] / (1 - std::pow(0.999, k + 1));
      theta[j] = theta[j] * (1 - 0.01 * 0.01) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_NEAR(p.at(0), theta[0], 1e-14);
  EXPECT_NEAR(p.at(1), theta[1], 1e-14);
}

TEST(AdamW, RejectsNonFiniteGradientByName) {
  TrainConfig c;
  Tensor p({2}, {1.0, 1.0}, true);
  nc::grad_buffer(p)[1] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState s;
  try {
    adamw_step({{"layer0.w_o", p}}, s, c, 1e-3);
    FAIL();
  } catch (const nc::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.w_o"), std::string::npos);
  }
  EXPECT_EQ(p.at(0), 1.0);
}

TEST(CosineLr, Endpoints) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  EXPECT_EQ(cosine_lr(0, 100, c), 1e-3);
  EXPECT_EQ(cosine_lr(100, 100, c), 1e-5);
  EXPECT_EQ(cosine_lr(150, 100, c), 1e-5);
  EXPECT_NEAR(cosine_lr(50, 100, c), (1e-3 + 1e-5) / 2, 1e-18);
  c.lr_floor = 0.0;
  EXPECT_NEAR(cosine_lr(25, 100, c), 0.5e-3 * (1 + std::cos(std::acos(-1.0) / 4)), 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, c), cosine_lr(s - 1, 100, c));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.accumulation(), 4u);
  c.physical_batch = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Persistence, MatchesIndependentComputation) {
  const auto& ds = tiny_data();
  const data::WindowSpec spec{16, 8, 1};
  const auto m = evaluate_persistence(ds, data::SegmentKind::test, spec);
  const auto& seg = ds.test;
  double se = 0, ae = 0;
  std::size_t count = 0, n = 0;
  for (std::size_t s = seg.begin; s + 24 <= seg.end; ++s, ++n) {
    for (std::size_t t = 16; t < 24; ++t)
      for (std::size_t c = 0; c < 2; ++c) {
        const double e = ds.standardized(s + t, c) - ds.standardized(s + 15, c);
        se += e * e;
        ae += std::abs(e);
        ++count;
      }
  }
  EXPECT_EQ(m.windows, n);
  EXPECT_NEAR(m.mse, se / count, 1e-12);
  EXPECT_NEAR(m.mae, ae / count, 1e-12);
}

TEST(Evaluate, FreshModelEqualsPersistence) {
  const auto cfg = tiny_model();
  const auto p = model::init_params(cfg, 3);
  const auto a = evaluate(p, cfg, tiny_data(), data::SegmentKind::val);
  const auto b = evaluate_persistence(tiny_data(), data::SegmentKind::val, {16, 8, 1});
  EXPECT_NEAR(a.mse, b.mse, 1e-13);
  EXPECT_NEAR(a.mae, b.mae, 1e-13);
}

TEST(TrainStep, AccumulationMatchesFullBatch) {
  const auto cfg = tiny_model();
  const auto ws = data::windows(tiny_data(), data::SegmentKind::train, {16, 8, 4});
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back((i * 7) % ws.size());

  auto run = [&](std::size_t physical) {
    auto p = model::init_params(cfg, 9);
    Rng perturb(10);
    for (auto& [n, t] : p.named_parameters(cfg)) {
      Tensor h = t;
      for (auto& v : h.mutable_values()) v += perturb.normal(0.0, 0.05);
    }
    TrainConfig tc;
    tc.effective_batch = 32;
    tc.physical_batch = physical;
    OptimizerState s;
    Rng rng(11);
    const auto learn = p.named_parameters(cfg);
    for (int step = 0; step < 2; ++step) train_step(learn, p, cfg, ws, batch, s, tc, 1e-3, rng);
    return p;
  };
  const auto a = run(8), b = run(32);
  const auto ta = a.named_tensors(), tb = b.named_tensors();
  double worst = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) worst = std::max(worst, testutil::max_abs_diff(ta[i].second, tb[i].second));
  EXPECT_LE(worst, 1e-12);
}

TEST(TrainStep, GradientIsBatchMeanOfSampleLosses) {
  auto cfg = tiny_model();
  cfg.dropout_rate = 0.0;
  cfg.channel_dropout_min_keep = 1.0;
  const auto ws = data::windows(tiny_data(), data::SegmentKind::train, {16, 8, 4});
  const std::vector<std::size_t> batch{0, 5, 9, 13};
  auto p = model::init_params(cfg, 12);
  const auto learn = p.named_parameters(cfg);
  // Oracle: the loss value computed without the tape.
  double expected = 0.0;
  for (auto i : batch) expected += mse(model::forward(ws[i].x, p, cfg), ws[i].y) / 4.0;
  TrainConfig tc;
  tc.effective_batch = 4;
  tc.physical_batch = 2;
  OptimizerState s;
  Rng rng(1);
  EXPECT_NEAR(train_step(learn, p, cfg, ws, batch, s, tc, 1e-3, rng), expected, 1e-14);
  EXPECT_THROW(train_step(learn, p, cfg, ws, {0, 1, 2}, s, tc, 1e-3, rng), std::invalid_argument);
}

TEST(TrainLoop, SameSeedIsBitIdentical) {
  const auto cfg = tiny_model();
  auto p1 = model::init_params(cfg, 5), p2 = model::init_params(cfg, 5);
  const auto r1 = train_loop(p1, cfg, tiny_data(), tiny_train());
  const auto r2 = train_loop(p2, cfg, tiny_data(), tiny_train());
  std::ostringstream h1, h2;
  write_history_csv(r1.history, h1);
  write_history_csv(r2.history, h2);
  EXPECT_EQ(h1.str(), h2.str());
  EXPECT_TRUE(same_params(r1.best, r2.best));
  EXPECT_TRUE(same_params(p1, p2));
  ASSERT_EQ(r1.history.size(), 3u);
  EXPECT_EQ(h1.str().substr(0, h1.str().find('\n')), "epoch,train_loss,val_mse,val_mae,lr");
}

TEST(TrainLoop, DifferentSeedDiffers) {
  const auto cfg = tiny_model();
  auto p1 = model::init_params(cfg, 5), p2 = model::init_params(cfg, 5);
  auto tc = tiny_train();
  tc.max_epochs = 1;
  const auto r1 = train_loop(p1, cfg, tiny_data(), tc);
  tc.seed += 1;
  const auto r2 = train_loop(p2, cfg, tiny_data(), tc);
  EXPECT_NE(r1.history[0].train_loss, r2.history[0].train_loss);
}

TEST(TrainLoop, BestCheckpointHasMinimumValidation) {
  const auto cfg = tiny_model();
  auto p = model::init_params(cfg, 6);
  auto tc = tiny_train();
  tc.max_epochs = 6;
  tc.learning_rate = 3e-2;
  const auto r = train_loop(p, cfg, tiny_data(), tc);
  ASSERT_GE(r.best_epoch, 1u);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (const auto& row : r.history)
    if (row.val_mse < best) best = row.val_mse, arg = row.epoch;
  EXPECT_EQ(r.best_epoch, arg);
  const auto again = evaluate(r.best, cfg, tiny_data(), data::SegmentKind::val, tc.eval_stride);
  EXPECT_EQ(again.mse, best);
  if (r.best_epoch != r.history.size()) EXPECT_FALSE(same_params(r.best, p));
}

TEST(TrainLoop, PatienceStopsAStalledModel) {
  const auto cfg = tiny_model();
  auto p = model::init_params(cfg, 7);
  auto tc = tiny_train();
  tc.max_epochs = 10;
  tc.patience = 1;
  tc.learning_rate = 1e-300;  // updates vanish below double resolution
  const auto r = train_loop(p, cfg, tiny_data(), tc);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.history[0].val_mse, r.history[1].val_mse);
}

TEST(TrainLoop, ScheduleReachesFloor) {
  const auto cfg = tiny_model();
  auto p = model::init_params(cfg, 8);
  const auto tc = tiny_train();
  const auto r = train_loop(p, cfg, tiny_data(), tc);
  const std::size_t per_epoch = data::window_count(tiny_data().train.length(), {16, 8, 4}) / 16;
  EXPECT_EQ(r.steps, 3 * per_epoch);
  EXPECT_EQ(r.history[0].lr, cosine_lr(per_epoch - 1, 3 * per_epoch, tc));
  EXPECT_GT(r.history[0].lr, r.history[2].lr);
}

TEST(TrainLoop, ZeroEpochsReturnsInitialParams) {
  const auto cfg = tiny_model();
  auto p = model::init_params(cfg, 9);
  auto tc = tiny_train();
  tc.max_epochs = 0;
  const auto r = train_loop(p, cfg, tiny_data(), tc);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_TRUE(same_params(r.best, p));
}

TEST(TrainLoop, NonFiniteLossReportsContext) {
  const auto cfg = tiny_model();
  auto p = model::init_params(cfg, 10);
  p.readout_b.mutable_values()[0] = std::numeric_limits<double>::infinity();
  try {
    train_loop(p, cfg, tiny_data(), tiny_train());
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1 step 1"), std::string::npos) << e.what();
  }
}
