#pragma once

// Plain-text experiment configs (`key = value`, `#` comments) and text
// checkpoints.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "stretchtime/data.hpp"
#include "stretchtime/model.hpp"
#include "stretchtime/train.hpp"

namespace stretchtime::experiment {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string data_path;  // empty: generate from `synthetic`
  data::SyntheticConfig synthetic;
  data::SplitRatios split;
  model::ModelConfig model;
  train::TrainConfig train;
  std::vector<std::size_t> horizons;  // empty: model.horizon only
  std::string output_dir = "runs/default";

  std::vector<std::size_t> resolved_horizons() const;
};

// Keys in the order `to_text` writes them.
const std::vector<std::string>& config_keys();

// Applies one assignment; throws ConfigError for unknown keys or bad values.
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& config, const std::string& key);

// Parses over defaults. Errors carry `origin:line`.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Validates every section; model.channels follows synthetic.channels until a
// CSV dataset is resolved.
void finalize(ExperimentConfig& config, const std::string& origin);

// Every key, defaults included; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);
void write_config(const ExperimentConfig& config, const std::filesystem::path& path);

// Loads data_path or generates the synthetic series, then splits it.
data::SeriesDataset resolve_dataset(const ExperimentConfig& config);

struct Checkpoint {
  model::ModelConfig config;
  model::StretchTimeParams params;
  std::size_t epoch = 0;
};

// Text format: `#` header, `model.<key> = value` lines, `epoch = n`, then one
// `tensor <name> <rank> <dims...>` line per stored tensor followed by its
// values in %.17g, one per line.
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace stretchtime::experiment
