#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "stretchtime/sype.hpp"
#include "stretchtime/train.hpp"
#include "stretchtime/verify.hpp"

namespace stretchtime::cli {

namespace fs = std::filesystem;
using experiment::ConfigError;
using experiment::ExperimentConfig;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

data::SegmentKind parse_split(const std::string& name) {
  if (name == "train") return data::SegmentKind::train;
  if (name == "val") return data::SegmentKind::val;
  if (name == "test") return data::SegmentKind::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val, test)");
}

// Dataset with model.channels taken from the data.
data::SeriesDataset load_dataset(ExperimentConfig& config) {
  data::SeriesDataset ds = experiment::resolve_dataset(config);
  config.model.channels = ds.channels();
  config.model.validate();
  return ds;
}

}  // namespace

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig config = path.empty() ? ExperimentConfig{} : experiment::load_config(path);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set " + item + ": expected key=value");
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(' ');
      const auto b = s.find_last_not_of(' ');
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    try {
      experiment::set_value(config, strip(item.substr(0, eq)), strip(item.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("--set: " + std::string(e.what()));
    }
  }
  experiment::finalize(config, path.empty() ? "<defaults>" : path);
  return config;
}

int cmd_generate(const GenerateOptions& options, std::ostream& log) {
  const ExperimentConfig config = resolve_config(options.config, options.overrides);
  const data::SeriesDataset ds = data::generate_warped_seasonal(config.synthetic);
  if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
  data::write_csv(ds, options.out);

  const fs::path stem = options.out.parent_path() / options.out.stem();
  experiment::write_config(config, stem.string() + ".config.txt");
  auto tau_out = open_out(stem.string() + ".tau.csv");
  tau_out << "t,tau\n";
  const auto tau = data::oscillating_warp_grid(config.synthetic.length, config.synthetic.warp_amplitude,
                                               config.synthetic.warp_period);
  for (std::size_t t = 0; t < tau.size(); ++t) tau_out << t << ',' << fmt(tau[t]) << '\n';
  log << "wrote " << ds.length() << " rows x " << ds.channels() << " channels to " << options.out.string()
      << '\n';
  return kOk;
}

void write_metrics_csv(const std::vector<HorizonMetrics>& rows, const fs::path& path) {
  auto out = open_out(path);
  out << "horizon,mse,mae\n";
  for (const auto& r : rows) out << r.horizon << ',' << fmt(r.mse) << ',' << fmt(r.mae) << '\n';
}

std::vector<HorizonMetrics> run_training(const ExperimentConfig& config, const data::SeriesDataset& dataset,
                                         const fs::path& out_dir, std::ostream& log, const std::string& tag) {
  fs::create_directories(out_dir);
  experiment::write_config(config, out_dir / "config.txt");
  std::vector<HorizonMetrics> metrics;
  for (std::size_t horizon : config.resolved_horizons()) {
    model::ModelConfig mc = config.model;
    mc.horizon = horizon;
    mc.channels = dataset.channels();
    model::StretchTimeParams params = model::init_params(mc, config.train.seed);
    const std::string label = tag + "T=" + std::to_string(horizon);
    const auto result = train::train_loop(params, mc, dataset, config.train, [&](const train::HistoryRow& r) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu train_loss %.6f val_mse %.6f val_mae %.6f lr %.3g\n",
                    label.c_str(), r.epoch, r.train_loss, r.val_mse, r.val_mae, r.lr);
      log << buf << std::flush;
    });
    const fs::path dir = out_dir / ("T" + std::to_string(horizon));
    fs::create_directories(dir);
    experiment::write_checkpoint({mc, result.best, result.best_epoch}, dir / "checkpoint.txt");
    auto history = open_out(dir / "history.csv");
    train::write_history_csv(result.history, history);

    const auto test = train::evaluate(result.best, mc, dataset, data::SegmentKind::test, config.train.eval_stride);
    metrics.push_back({horizon, test.mse, test.mae});
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%s] best epoch %zu test_mse %.6f test_mae %.6f\n", label.c_str(),
                  result.best_epoch, test.mse, test.mae);
    log << buf << std::flush;
  }
  write_metrics_csv(metrics, out_dir / "metrics.csv");
  return metrics;
}

int cmd_train(const TrainOptions& options, std::ostream& log) {
  ExperimentConfig config = resolve_config(options.config, options.overrides);
  if (options.out_dir) config.output_dir = options.out_dir->string();
  const data::SeriesDataset ds = load_dataset(config);
  run_training(config, ds, config.output_dir, log);
  return kOk;
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& log) {
  ExperimentConfig config = resolve_config(options.config, options.overrides);
  std::optional<experiment::Checkpoint> checkpoint;
  if (!options.checkpoint.empty()) {
    checkpoint = experiment::read_checkpoint(options.checkpoint);
    config.model = checkpoint->config;
    config.horizons = {checkpoint->config.horizon};
  } else if (!options.persistence) {
    throw ConfigError("evaluate: --checkpoint is required unless --persistence is given");
  }
  const data::SeriesDataset ds = experiment::resolve_dataset(config);
  if (ds.channels() != config.model.channels) {
    throw ConfigError("evaluate: checkpoint expects " + std::to_string(config.model.channels) +
                      " channels, data has " + std::to_string(ds.channels()));
  }
  const model::ModelConfig& mc = config.model;
  std::vector<std::size_t> horizons = options.horizons.empty() ? std::vector<std::size_t>{mc.horizon} : options.horizons;
  for (auto h : horizons) {
    if (h == 0 || h > mc.horizon) {
      throw ConfigError("evaluate: horizon " + std::to_string(h) + " outside 1.." + std::to_string(mc.horizon));
    }
  }

  const data::SegmentKind segment = parse_split(options.split);
  const auto ws = data::windows(ds, segment, {mc.lookback, mc.horizon, config.train.eval_stride});
  const std::size_t ch = ds.channels();
  std::vector<HorizonMetrics> rows;
  for (auto h : horizons) rows.push_back({h, 0.0, 0.0});
  std::vector<numcore::Tensor> preds;
  {
    numcore::NoGradScope no_grad;
    for (const auto& w : ws) {
      numcore::Tensor pred;
      if (options.persistence) {
        const auto last = w.x.values().subspan((mc.lookback - 1) * ch, ch);
        std::vector<double> v(mc.horizon * ch);
        for (std::size_t t = 0; t < mc.horizon; ++t) {
          for (std::size_t c = 0; c < ch; ++c) v[t * ch + c] = last[c];
        }
        pred = numcore::Tensor({mc.horizon, ch}, std::move(v));
      } else {
        pred = model::forward(w.x, checkpoint->params, mc);
      }
      const auto p = pred.values();
      const auto y = w.y.values();
      for (auto& r : rows) {
        double se = 0.0, ae = 0.0;
        for (std::size_t i = 0; i < r.horizon * ch; ++i) {
          se += (p[i] - y[i]) * (p[i] - y[i]);
          ae += std::abs(p[i] - y[i]);
        }
        r.mse += se / static_cast<double>(r.horizon * ch);
        r.mae += ae / static_cast<double>(r.horizon * ch);
      }
      if (preds.size() < ws.size()) preds.push_back(pred);
    }
  }
  for (auto& r : rows) {
    r.mse /= static_cast<double>(ws.size());
    r.mae /= static_cast<double>(ws.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %s T=%zu mse %.6f mae %.6f (%zu windows)\n",
                  options.persistence ? "persistence" : "model", options.split.c_str(), r.horizon, r.mse, r.mae,
                  ws.size());
    log << buf;
  }
  write_metrics_csv(rows, options.out);

  if (options.dump_forecasts > 0) {
    const std::size_t k = std::min(options.dump_forecasts, ws.size());
    auto out = open_out(options.dump_path);
    out << "sample,channel,t,truth,pred\n";
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t idx = s * ws.size() / k;
      const auto& w = ws[idx];
      const auto p = preds[idx].values();
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t t = 0; t < mc.lookback + mc.horizon; ++t) {
          const bool past = t < mc.lookback;
          const double truth = past ? w.x.at(t, c) : w.y.at(t - mc.lookback, c);
          out << s << ',' << c << ',' << t << ',' << fmt(truth) << ','
              << (past ? std::string("nan") : fmt(p[(t - mc.lookback) * ch + c])) << '\n';
        }
      }
    }
    log << "wrote " << k << " forecast windows to " << options.dump_path.string() << '\n';
  }
  return kOk;
}

int cmd_verify(const VerifyOptions& options, std::ostream& log) {
  const auto rows = verify::run_all(options.seed);
  auto out = open_out(options.report);
  verify::write_report(rows, out);
  bool all = true;
  for (const auto& r : rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-36s %s  max_error %.3g (threshold %.3g, %zu samples)\n", r.check.c_str(),
                  r.pass ? "PASS" : "FAIL", r.max_error, r.threshold, r.samples);
    log << buf;
    all = all && r.pass;
  }
  return all ? kOk : kVerificationFailed;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"stretchtime", "rope",   "no_symplectic",
                                                 "no_warp",     "no_mlp", "pure_softmax"};
  return names;
}

void apply_variant(ExperimentConfig& config, const std::string& variant) {
  using attention::PeMode;
  using attention::WarpMode;
  auto& m = config.model;
  if (variant == "stretchtime") {
    m.pe_mode = PeMode::sype;
  } else if (variant == "rope") {
    m.pe_mode = PeMode::rope;
  } else if (variant == "no_symplectic") {
    m.pe_mode = PeMode::rope;
    m.warp_mode = WarpMode::adaptive;
  } else if (variant == "no_warp") {
    m.pe_mode = PeMode::sype;
    m.warp_mode = WarpMode::identity;
  } else if (variant == "no_mlp") {
    m.use_mlp = false;
  } else if (variant == "pure_softmax") {
    m.pe_mode = PeMode::none;
  } else {
    throw ConfigError("unknown variant '" + variant + "'");
  }
}

int cmd_compare(const CompareOptions& options, std::ostream& log) {
  ExperimentConfig base = resolve_config(options.config, options.overrides);
  if (options.out_dir) base.output_dir = options.out_dir->string();
  for (const auto& v : options.variants) {
    ExperimentConfig probe = base;
    apply_variant(probe, v);
  }
  const data::SeriesDataset ds = load_dataset(base);
  const std::vector<std::uint64_t> seeds =
      options.seeds.empty() ? std::vector<std::uint64_t>{base.train.seed} : options.seeds;
  const fs::path root = base.output_dir;

  struct Row {
    std::string variant;
    std::uint64_t seed;
    HorizonMetrics m;
  };
  std::vector<Row> rows;
  for (const auto& variant : options.variants) {
    for (auto seed : seeds) {
      ExperimentConfig cfg = base;
      apply_variant(cfg, variant);
      cfg.train.seed = seed;
      const fs::path dir = root / variant / ("seed" + std::to_string(seed));
      cfg.output_dir = dir.string();
      for (const auto& m : run_training(cfg, ds, dir, log, variant + " seed=" + std::to_string(seed) + " ")) {
        rows.push_back({variant, seed, m});
      }
    }
  }

  auto out = open_out(root / "compare.csv");
  out << "variant,seed,horizon,mse,mae\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.m.horizon << ',' << fmt(r.m.mse) << ',' << fmt(r.m.mae) << '\n';
  }

  auto summary = open_out(root / "summary.csv");
  summary << "horizon";
  for (const auto& v : options.variants) summary << ',' << v << "_mse," << v << "_mae";
  summary << '\n';
  log << "\nmean over " << seeds.size() << " seed(s)\n";
  for (auto h : base.resolved_horizons()) {
    summary << h;
    log << "T=" << h;
    for (const auto& v : options.variants) {
      double mse = 0.0, mae = 0.0;
      std::size_t n = 0;
      for (const auto& r : rows) {
        if (r.variant == v && r.m.horizon == h) {
          mse += r.m.mse;
          mae += r.m.mae;
          ++n;
        }
      }
      mse /= static_cast<double>(n);
      mae /= static_cast<double>(n);
      summary << ',' << fmt(mse) << ',' << fmt(mae);
      char buf[120];
      std::snprintf(buf, sizeof buf, "  %s mse %.6f mae %.6f", v.c_str(), mse, mae);
      log << buf;
    }
    summary << '\n';
    log << '\n';
  }
  return kOk;
}

}  // namespace stretchtime::cli
