#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <variant>

#include "stretchtime/data.hpp"
#include "stretchtime/random.hpp"
#include "stretchtime/sype.hpp"

using namespace stretchtime::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "stretchtime_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

SeriesDataset ramp(std::size_t rows, std::size_t cols) {
  SeriesDataset ds;
  ds.raw = {rows, cols, std::vector<double>(rows * cols)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) ds.raw(r, c) = std::sin(0.37 * r + c) + 0.01 * r * (c + 1);
  return ds;
}

}  // namespace

TEST(OscillatingWarp, HandValues) {
  for (std::size_t t : {0u, 1u, 17u, 99u}) EXPECT_EQ(oscillating_warp(t, 0.0, 100.0), double(t + 1));
  const double two_pi = 2 * std::numbers::pi;
  const double expected = 3.0 + 0.5 * (std::sin(0.0) + std::sin(two_pi / 100) + std::sin(2 * two_pi / 100));
  EXPECT_NEAR(oscillating_warp(2, 0.5, 100.0), expected, 1e-15);
  EXPECT_NEAR(oscillating_warp(2, 0.5, 100.0), 3.0940619, 1e-6);
  EXPECT_THROW(oscillating_warp(3, 1.0, 100.0), std::invalid_argument);
}

TEST(OscillatingWarp, GridMatchesPointwiseAndIncrementsAreBounded) {
  const auto grid = oscillating_warp_grid(1200, 0.5, 500.0);
  for (std::size_t t = 0; t < grid.size(); t += 97) EXPECT_NEAR(grid[t], oscillating_warp(t, 0.5, 500.0), 1e-9);
  for (std::size_t t = 1; t < grid.size(); ++t) {
    const double inc = grid[t] - grid[t - 1];
    EXPECT_GE(inc, 0.5 - 1e-12);
    EXPECT_LE(inc, 1.5 + 1e-12);
    EXPECT_NEAR(inc, 1.0 + 0.5 * std::sin(2 * std::numbers::pi * t / 500.0), 1e-12);
  }
}

TEST(OscillatingWarp, FeasibilityDependsOnAmplitude) {
  const double omega0 = 2 * std::numbers::pi / 24;
  using stretchtime::sype::Feasible;
  const auto warped = oscillating_warp_grid(200, 0.5, 50.0);
  EXPECT_FALSE(std::holds_alternative<Feasible>(stretchtime::sype::rope_feasibility_check(warped, omega0)));
  const auto flat = oscillating_warp_grid(200, 0.0, 50.0);
  const auto r = stretchtime::sype::rope_feasibility_check(flat, omega0);
  ASSERT_TRUE(std::holds_alternative<Feasible>(r));
  EXPECT_NEAR(std::get<Feasible>(r).theta, omega0, 1e-15);
}

TEST(Synthetic, PureSeasonalClosedForm) {
  SyntheticConfig c;
  c.length = 300;
  c.phi = 0.0;
  c.sigma = 0.0;
  const auto ds = generate_warped_seasonal(c);
  const auto tau = oscillating_warp_grid(c.length, c.warp_amplitude, c.warp_period);
  for (std::size_t t = 0; t < c.length; ++t)
    for (std::size_t ch = 0; ch < c.channels; ++ch)
      EXPECT_EQ(ds.raw(t, ch), c.amplitude * std::sin(c.omega0 * tau[t] + 2 * std::numbers::pi * ch / 3.0));
}

TEST(Synthetic, FullPeriodHitsZero) {
  SyntheticConfig c;
  c.length = 30;
  c.channels = 1;
  c.phi = 0.0;
  c.sigma = 0.0;
  c.warp_amplitude = 0.0;
  c.omega0 = 2 * std::numbers::pi / 24;
  const auto ds = generate_warped_seasonal(c);
  EXPECT_NEAR(ds.raw(23, 0), 0.0, 1e-14);
}

TEST(Synthetic, SilentConfigIsZero) {
  SyntheticConfig c;
  c.length = 100;
  c.sigma = 0.0;
  c.amplitude = 0.0;
  for (double v : generate_warped_seasonal(c).raw.values) EXPECT_EQ(v, 0.0);
}

TEST(Synthetic, RecursionOracle) {
  SyntheticConfig c;
  c.length = 50;
  c.channels = 2;
  c.phases = {0.3, -1.1};
  const auto ds = generate_warped_seasonal(c);
  stretchtime::Rng rng(c.seed);
  std::vector<double> prev(2, 0.0);
  for (std::size_t t = 0; t < c.length; ++t)
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const double x = c.phi * prev[ch] + std::sin(c.omega0 * oscillating_warp(t, 0.5, 500.0) + c.phases[ch]) +
                       c.sigma * rng.normal();
      EXPECT_NEAR(ds.raw(t, ch), x, 1e-12);
      prev[ch] = ds.raw(t, ch);
    }
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig c;
  c.length = 500;
  const auto a = generate_warped_seasonal(c), b = generate_warped_seasonal(c);
  EXPECT_EQ(std::memcmp(a.raw.values.data(), b.raw.values.data(), a.raw.values.size() * sizeof(double)), 0);
  c.seed += 1;
  EXPECT_NE(generate_warped_seasonal(c).raw.values, a.raw.values);
}

TEST(Synthetic, ValidatesConfig) {
  auto bad = [](auto edit) {
    SyntheticConfig c;
    edit(c);
    EXPECT_THROW(generate_warped_seasonal(c), std::invalid_argument);
  };
  bad([](SyntheticConfig& c) { c.phi = 1.0; });
  bad([](SyntheticConfig& c) { c.sigma = -0.1; });
  bad([](SyntheticConfig& c) { c.warp_amplitude = 1.0; });
  bad([](SyntheticConfig& c) { c.warp_period = 1.5; });
  bad([](SyntheticConfig& c) { c.phases = {0.0}; });
}

TEST(Csv, LoadsInFileOrder) {
  const auto p = scratch("plain.csv");
  write_text(p, "a,b\n1,2\n3.5,-4\n5e-1,6\n");
  const auto ds = load_csv(p);
  ASSERT_EQ(ds.length(), 3u);
  ASSERT_EQ(ds.channels(), 2u);
  EXPECT_EQ(ds.raw.values, (std::vector<double>{1, 2, 3.5, -4, 0.5, 6}));
  EXPECT_EQ(ds.names, (std::vector<std::string>{"a", "b"}));
}

TEST(Csv, DropsDateColumn) {
  const auto p = scratch("dated.csv");
  write_text(p, "Date,x,y\n2020-01-01 00:00,1,2\n2020-01-01 01:00,3,4\n");
  const auto ds = load_csv(p);
  EXPECT_EQ(ds.channels(), 2u);
  EXPECT_EQ(ds.raw.values, (std::vector<double>{1, 2, 3, 4}));
}

TEST(Csv, ErrorNamesRowAndColumn) {
  const auto p = scratch("bad.csv");
  write_text(p, "a,b\n1,2\n1,2\n1,2\n1,2\n1,oops\n");
  try {
    load_csv(p);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("(5,2)"), std::string::npos) << e.what();
  }
  write_text(p, "a,b\n1,2\n3\n");
  EXPECT_THROW(load_csv(p), std::runtime_error);
  EXPECT_THROW(load_csv(scratch("missing.csv")), std::runtime_error);
}

TEST(Csv, WriteReadRoundTripIsExact) {
  SyntheticConfig c;
  c.length = 200;
  const auto ds = generate_warped_seasonal(c);
  const auto p = scratch("roundtrip.csv");
  write_csv(ds, p);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "c0,c1,c2");
  const auto back = load_csv(p);
  EXPECT_EQ(back.raw.values, ds.raw.values);
}

TEST(Split, BoundariesAndRatios) {
  const auto ds = split(ramp(100, 2));
  EXPECT_EQ(ds.train.begin, 0u);
  EXPECT_EQ(ds.train.end, 70u);
  EXPECT_EQ(ds.val.end, 80u);
  EXPECT_EQ(ds.test.end, 100u);
  EXPECT_THROW(split(ramp(100, 2), {0.5, 0.2, 0.2}), std::invalid_argument);
  EXPECT_THROW(split(ramp(100, 2), {0.7, 0.1, 0.2}, 25), std::invalid_argument);
}

TEST(Split, TrainSegmentIsStandardized) {
  const auto ds = split(ramp(1000, 3));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 700; ++r) mean += ds.standardized(r, c) / 700.0;
    for (std::size_t r = 0; r < 700; ++r) var += std::pow(ds.standardized(r, c) - mean, 2) / 700.0;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-9);
  }
}

TEST(Split, TestRowsDoNotMoveTheTransform) {
  auto a = ramp(500, 2), b = ramp(500, 2);
  for (std::size_t r = 400; r < 500; ++r) b.raw(r, 0) += 1000.0;
  const auto sa = split(a), sb = split(b);
  EXPECT_EQ(sa.train_mean, sb.train_mean);
  EXPECT_EQ(sa.train_std, sb.train_std);
}

TEST(Split, RejectsConstantChannel) {
  auto ds = ramp(100, 2);
  for (std::size_t r = 0; r < 100; ++r) ds.raw(r, 1) = 3.0;
  EXPECT_THROW(split(ds), std::invalid_argument);
}

TEST(Split, RejectsNonFiniteTrainStatistics) {
  auto ds = ramp(100, 2);
  ds.raw(10, 1) = 1e200;
  EXPECT_THROW(split(ds), std::invalid_argument);
  ds.raw(10, 1) = std::nan("");
  EXPECT_THROW(split(ds), std::invalid_argument);
}

TEST(Windows, CountAndIndexing) {
  EXPECT_EQ(window_count(10, {4, 2, 1}), 5u);
  EXPECT_EQ(window_count(10, {4, 2, 10}), 1u);
  EXPECT_EQ(window_count(5, {4, 2, 1}), 0u);
  EXPECT_EQ(window_count(20, {4, 2, 3}), 5u);

  const auto ds = split(ramp(100, 2));
  const auto w = windows(ds, SegmentKind::val, {4, 2, 1});
  ASSERT_EQ(w.size(), 5u);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(w[0].y.at(t, c), ds.standardized(70 + 4 + t, c));
  EXPECT_EQ(w[3].start, 73u);
  EXPECT_EQ(w[3].x.at(0, 1), ds.standardized(73, 1));
  EXPECT_THROW(windows(ds, SegmentKind::val, {8, 4, 1}), std::invalid_argument);
}

TEST(Windows, AreCopies) {
  auto ds = split(ramp(100, 2));
  const auto w = windows(ds, SegmentKind::train, {4, 2, 1});
  const double before = w[0].x.at(0, 0);
  ds.standardized(0, 0) += 99.0;
  EXPECT_EQ(w[0].x.at(0, 0), before);
}

TEST(Windows, RequireSplit) {
  EXPECT_THROW(windows(ramp(50, 1), SegmentKind::train, {4, 2, 1}), std::logic_error);
}
