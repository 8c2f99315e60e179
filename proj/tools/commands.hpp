#pragma once

// Subcommands of the `stretchtime` executable. Each returns a process exit
// code; configuration and IO problems surface as exceptions that main()
// maps to codes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stretchtime/experiment.hpp"

namespace stretchtime::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kVerificationFailed = 2, kDiverged = 3 };

// Config file (optional) plus `key=value` overrides, validated.
experiment::ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides);

struct GenerateOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::filesystem::path out = "data.csv";
};
// Writes the CSV, `<stem>.config.txt` and `<stem>.tau.csv` next to it.
int cmd_generate(const GenerateOptions& options, std::ostream& log);

struct HorizonMetrics {
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
};

void write_metrics_csv(const std::vector<HorizonMetrics>& rows, const std::filesystem::path& path);

// Trains one model per resolved horizon under `out_dir` and returns the test
// metrics of each best checkpoint.
std::vector<HorizonMetrics> run_training(const experiment::ExperimentConfig& config,
                                         const data::SeriesDataset& dataset,
                                         const std::filesystem::path& out_dir, std::ostream& log,
                                         const std::string& tag = "");

struct TrainOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out_dir;  // overrides output.dir
};
int cmd_train(const TrainOptions& options, std::ostream& log);

struct EvaluateOptions {
  std::string checkpoint;  // may be empty with `persistence`
  std::string config;      // data source and, without a checkpoint, window sizes
  std::vector<std::string> overrides;
  std::string split = "test";
  std::vector<std::size_t> horizons;  // empty: the checkpoint horizon
  std::size_t dump_forecasts = 0;
  std::filesystem::path dump_path = "forecasts.csv";
  bool persistence = false;
  std::filesystem::path out = "metrics.csv";
};
int cmd_evaluate(const EvaluateOptions& options, std::ostream& log);

struct VerifyOptions {
  std::uint64_t seed = 2026;
  std::filesystem::path report = "verify_report.csv";
};
int cmd_verify(const VerifyOptions& options, std::ostream& log);

// Named model variants: stretchtime, rope, no_symplectic, no_warp, no_mlp,
// pure_softmax.
const std::vector<std::string>& variant_names();
void apply_variant(experiment::ExperimentConfig& config, const std::string& variant);

struct CompareOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::string> variants = {"stretchtime", "rope"};
  std::vector<std::uint64_t> seeds;  // empty: train.seed only
  std::optional<std::filesystem::path> out_dir;
};
int cmd_compare(const CompareOptions& options, std::ostream& log);

}  // namespace stretchtime::cli
