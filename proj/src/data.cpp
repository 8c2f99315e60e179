#include "stretchtime/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "stretchtime/random.hpp"

namespace stretchtime::data {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

void SyntheticConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("synthetic config: " + what); };
  if (length < 1) bad("length must be >= 1");
  if (channels < 1) bad("channels must be >= 1");
  if (!(std::abs(phi) < 1.0)) bad("|phi| must be < 1");
  if (!(sigma >= 0.0)) bad("sigma must be >= 0");
  if (!(warp_amplitude >= 0.0 && warp_amplitude < 1.0)) bad("warp amplitude must lie in [0, 1)");
  if (!(warp_period >= 2.0)) bad("warp period must be >= 2");
  if (!phases.empty() && phases.size() != channels) bad("phases must list one value per channel");
}

double SyntheticConfig::phase(std::size_t channel) const {
  if (!phases.empty()) return phases.at(channel);
  return 2.0 * std::numbers::pi * static_cast<double>(channel) / static_cast<double>(channels);
}

double oscillating_warp(std::size_t t, double warp_amplitude, double period) {
  if (!(warp_amplitude >= 0.0 && warp_amplitude < 1.0)) {
    throw std::invalid_argument("oscillating_warp: amplitude must lie in [0, 1)");
  }
  double tau = 0.0;
  for (std::size_t i = 0; i <= t; ++i) {
    tau += 1.0 + warp_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / period);
  }
  return tau;
}

std::vector<double> oscillating_warp_grid(std::size_t length, double warp_amplitude, double period) {
  if (!(warp_amplitude >= 0.0 && warp_amplitude < 1.0)) {
    throw std::invalid_argument("oscillating_warp: amplitude must lie in [0, 1)");
  }
  std::vector<double> tau(length);
  double running = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    running += 1.0 + warp_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / period);
    tau[i] = running;
  }
  return tau;
}

const Segment& SeriesDataset::segment(SegmentKind kind) const {
  if (!is_split) throw std::logic_error("dataset has not been split");
  switch (kind) {
    case SegmentKind::train: return train;
    case SegmentKind::val: return val;
    case SegmentKind::test: return test;
  }
  return train;
}

SeriesDataset generate_warped_seasonal(const SyntheticConfig& config) {
  config.validate();
  const std::vector<double> tau =
      oscillating_warp_grid(config.length, config.warp_amplitude, config.warp_period);
  SeriesDataset ds;
  ds.raw = {config.length, config.channels, std::vector<double>(config.length * config.channels)};
  for (std::size_t c = 0; c < config.channels; ++c) ds.names.push_back("c" + std::to_string(c));

  Rng rng(config.seed);
  for (std::size_t t = 0; t < config.length; ++t) {
    for (std::size_t c = 0; c < config.channels; ++c) {
      const double eps = config.sigma > 0.0 ? config.sigma * rng.normal() : 0.0;
      const double seasonal = config.amplitude * std::sin(config.omega0 * tau[t] + config.phase(c));
      const double prev = t == 0 ? 0.0 : ds.raw(t - 1, c);
      ds.raw(t, c) = config.phi * prev + seasonal + eps;
    }
  }
  return ds;
}

SeriesDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: " + path.string() + " is empty");
  auto header = split_commas(line);
  if (header.empty()) throw std::runtime_error("load_csv: missing header in " + path.string());
  const bool drop_first = lower(header.front()) == "date";

  SeriesDataset ds;
  ds.names.assign(header.begin() + (drop_first ? 1 : 0), header.end());
  const std::size_t cols = ds.names.size();
  if (cols == 0) throw std::runtime_error("load_csv: no value columns in " + path.string());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_csv: " + path.string() + " row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    }
    for (std::size_t j = drop_first ? 1 : 0; j < cells.size(); ++j) {
      const std::string& cell = cells[j];
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw std::runtime_error("load_csv: " + path.string() + " unparseable cell at (" +
                                 std::to_string(row) + "," + std::to_string(j + 1) + "): '" + cell + "'");
      }
      ds.raw.values.push_back(value);
    }
  }
  ds.raw.rows = row;
  ds.raw.cols = cols;
  return ds;
}

void write_csv(const SeriesDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  for (std::size_t c = 0; c < dataset.channels(); ++c) {
    out << (c ? "," : "") << "c" << c;
  }
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < dataset.length(); ++r) {
    for (std::size_t c = 0; c < dataset.channels(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", dataset.raw(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path.string());
}

SeriesDataset split(SeriesDataset ds, const SplitRatios& ratios, std::size_t min_segment) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw std::invalid_argument("split: ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split: ratios must sum to 1");
  }
  const std::size_t n = ds.length();
  const auto floor_rows = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t train_end = floor_rows(ratios.train);
  const std::size_t val_end = train_end + floor_rows(ratios.val);
  ds.train = {0, train_end};
  ds.val = {train_end, val_end};
  ds.test = {val_end, n};
  const std::pair<const char*, Segment> parts[] = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  for (const auto& [name, seg] : parts) {
    if (seg.length() < min_segment || seg.length() == 0) {
      throw std::invalid_argument(std::string("split: ") + name + " segment has " +
                                  std::to_string(seg.length()) + " rows, need at least " +
                                  std::to_string(std::max<std::size_t>(min_segment, 1)));
    }
  }

  const std::size_t ch = ds.channels();
  ds.train_mean.assign(ch, 0.0);
  ds.train_std.assign(ch, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < train_end; ++r) mean += ds.raw(r, c);
    mean /= static_cast<double>(train_end);
    double var = 0.0;
    for (std::size_t r = 0; r < train_end; ++r) var += (ds.raw(r, c) - mean) * (ds.raw(r, c) - mean);
    var /= static_cast<double>(train_end);
    if (!(var > 0.0)) {
      throw std::invalid_argument("split: channel " + std::to_string(c) + " is constant on the train segment");
    }
    if (!std::isfinite(mean) || !std::isfinite(var)) {
      throw std::invalid_argument("split: channel " + std::to_string(c) + " has non-finite train statistics");
    }
    ds.train_mean[c] = mean;
    ds.train_std[c] = std::sqrt(var);
  }
  ds.standardized = ds.raw;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      ds.standardized(r, c) = (ds.raw(r, c) - ds.train_mean[c]) / ds.train_std[c];
    }
  }
  ds.is_split = true;
  return ds;
}

void WindowSpec::validate() const {
  if (lookback < 1 || horizon < 1) throw std::invalid_argument("window spec: lookback and horizon must be >= 1");
  if (stride < 1) throw std::invalid_argument("window spec: stride must be >= 1");
}

std::size_t window_count(std::size_t segment_length, const WindowSpec& spec) {
  spec.validate();
  const std::size_t span = spec.lookback + spec.horizon;
  if (segment_length < span) return 0;
  return (segment_length - span) / spec.stride + 1;
}

std::vector<Window> windows(const SeriesDataset& dataset, SegmentKind kind, const WindowSpec& spec) {
  const Segment& seg = dataset.segment(kind);
  const std::size_t count = window_count(seg.length(), spec);
  if (count == 0) {
    throw std::invalid_argument("windows: segment of " + std::to_string(seg.length()) +
                                " rows is shorter than lookback + horizon = " +
                                std::to_string(spec.lookback + spec.horizon));
  }
  const Matrix& m = dataset.standardized;
  const std::size_t ch = m.cols;
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = seg.begin + w * spec.stride;
    const auto row = [&](std::size_t r) { return m.values.begin() + static_cast<std::ptrdiff_t>(r * ch); };
    std::vector<double> x(row(start), row(start + spec.lookback));
    std::vector<double> y(row(start + spec.lookback), row(start + spec.lookback + spec.horizon));
    out.push_back({numcore::Tensor({spec.lookback, ch}, std::move(x)),
                   numcore::Tensor({spec.horizon, ch}, std::move(y)), start});
  }
  return out;
}

}  // namespace stretchtime::data
