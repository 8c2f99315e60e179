#pragma once

// Warped seasonal AR(1) synthetic series, CSV ingestion, chronological
// splits with train-only standardization, and sliding windows.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stretchtime/numcore.hpp"

namespace stretchtime::data {

// Row-major (rows x cols) matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct SyntheticConfig {
  std::size_t length = 6000;
  std::size_t channels = 3;
  double phi = 0.9;
  double amplitude = 1.0;
  double omega0 = 0.2617993877991494;  // 2 pi / 24
  double sigma = 0.1;
  double warp_amplitude = 0.5;
  double warp_period = 500.0;
  // Phase angle per channel added inside the sine; empty selects 2 pi c / C.
  std::vector<double> phases;
  std::uint64_t seed = 2026;

  void validate() const;
  double phase(std::size_t channel) const;
};

// tau(t) = sum_{i=0}^{t} (1 + A sin(2 pi i / P)).
double oscillating_warp(std::size_t t, double warp_amplitude, double period);
std::vector<double> oscillating_warp_grid(std::size_t length, double warp_amplitude, double period);

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

enum class SegmentKind { train, val, test };

struct SeriesDataset {
  Matrix raw;                      // length x C, as generated or loaded
  Matrix standardized;             // filled by split()
  std::vector<std::string> names;  // column names
  Segment train, val, test;
  std::vector<double> train_mean;
  std::vector<double> train_std;
  bool is_split = false;

  std::size_t length() const { return raw.rows; }
  std::size_t channels() const { return raw.cols; }
  const Segment& segment(SegmentKind kind) const;
};

// x_t = phi x_{t-1} + A sin(omega0 tau(t) + phase_c) + eps_t per channel, with
// x_0 = A sin(omega0 tau(0) + phase_c) + eps_0. Noise is drawn row by row,
// channel by channel, from Rng(seed).
SeriesDataset generate_warped_seasonal(const SyntheticConfig& config);

// Comma-separated numeric columns under a header row. A first column named
// "date" (any case) is dropped. Errors name 1-based (data row, file column).
SeriesDataset load_csv(const std::filesystem::path& path);

// Header c0,...,c{C-1} and %.17g values of the raw series.
void write_csv(const SeriesDataset& dataset, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Chronological contiguous segments; standardizes every row with the
// population mean and standard deviation of the train rows. Throws when a
// segment is shorter than `min_segment` or a channel is constant on train.
SeriesDataset split(SeriesDataset dataset, const SplitRatios& ratios = {}, std::size_t min_segment = 1);

struct WindowSpec {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t stride = 1;

  void validate() const;
};

struct Window {
  numcore::Tensor x;  // (L, C)
  numcore::Tensor y;  // (T, C)
  std::size_t start = 0;  // first row of x within the series
};

std::size_t window_count(std::size_t segment_length, const WindowSpec& spec);

// Copies of sliding windows over the standardized values of one segment.
std::vector<Window> windows(const SeriesDataset& dataset, SegmentKind segment, const WindowSpec& spec);

}  // namespace stretchtime::data
