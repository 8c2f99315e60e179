#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "stretchtime/train.hpp"

using namespace stretchtime;

int main(int argc, char** argv) {
  CLI::App app{"StretchTime: symplectic positional embeddings for time-warped forecasting"};
  app.require_subcommand(1);

  cli::GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write a warped seasonal AR(1) dataset as CSV");
  generate->add_option("-c,--config", gen.config, "Experiment config file");
  generate->add_option("-s,--set", gen.overrides, "Override a config key (key=value)");
  generate->add_option("-o,--out", gen.out, "Output CSV path")->capture_default_str();

  cli::TrainOptions tr;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train one model per horizon and report test metrics");
  train->add_option("-c,--config", tr.config, "Experiment config file");
  train->add_option("-s,--set", tr.overrides, "Override a config key (key=value)");
  train->add_option("-o,--out", train_out, "Output directory (overrides output.dir)");

  cli::EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or the persistence baseline");
  evaluate->add_option("-k,--checkpoint", ev.checkpoint, "Checkpoint file");
  evaluate->add_option("-c,--config", ev.config, "Experiment config naming the data");
  evaluate->add_option("-s,--set", ev.overrides, "Override a config key (key=value)");
  evaluate->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  evaluate->add_option("--horizons", ev.horizons, "Report metrics over these forecast prefixes")->delimiter(',');
  evaluate->add_option("--dump-forecasts", ev.dump_forecasts, "Write this many forecast windows");
  evaluate->add_option("--dump-path", ev.dump_path, "Forecast dump CSV")->capture_default_str();
  evaluate->add_flag("--persistence", ev.persistence, "Score last-value persistence instead of a model");
  evaluate->add_option("-o,--out", ev.out, "Metrics CSV")->capture_default_str();

  cli::VerifyOptions ver;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite and write a CSV report");
  verify->add_option("--seed", ver.seed, "Sampling seed")->capture_default_str();
  verify->add_option("-o,--report", ver.report, "Report CSV")->capture_default_str();

  cli::CompareOptions cmp;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Train several variants on the same data and seeds");
  compare->add_option("-c,--config", cmp.config, "Experiment config file");
  compare->add_option("-s,--set", cmp.overrides, "Override a config key (key=value)");
  compare->add_option("--variants", cmp.variants, "Variants to train")
      ->delimiter(',')
      ->check(CLI::IsMember(cli::variant_names()))
      ->capture_default_str();
  compare->add_option("--seeds", cmp.seeds, "Training seeds")->delimiter(',');
  compare->add_option("-o,--out", compare_out, "Output directory (overrides output.dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*generate) return cli::cmd_generate(gen, std::cerr);
    if (*train) {
      if (!train_out.empty()) tr.out_dir = train_out;
      return cli::cmd_train(tr, std::cerr);
    }
    if (*evaluate) return cli::cmd_evaluate(ev, std::cerr);
    if (*verify) return cli::cmd_verify(ver, std::cerr);
    if (*compare) {
      if (!compare_out.empty()) cmp.out_dir = compare_out;
      return cli::cmd_compare(cmp, std::cerr);
    }
  } catch (const train::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return cli::kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kUsage;
  }
  return cli::kUsage;
}
