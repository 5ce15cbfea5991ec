// Command-line entry point: verification suites, the KMV timing harness,
// desk-scale training, forecasting from checkpoints, and CSV report merging.
//
// Exit codes: 0 success, 1 property/validation failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>

#include "weaver/bench.hpp"
#include "weaver/csv.hpp"
#include "weaver/data.hpp"
#include "weaver/kron.hpp"
#include "weaver/model.hpp"
#include "weaver/train.hpp"
#include "weaver/verify.hpp"

namespace fs = std::filesystem;
using namespace weaver;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct SynthFlags {
  bool enabled = false;
  std::size_t nodes = 6;
  std::size_t days = 7;
  int cadence = 5;
  double missing = 0.1;
  double noise = 1.0;
};

void add_synth_flags(CLI::App* cmd, SynthFlags& f) {
  cmd->add_flag("--synthetic", f.enabled, "Generate a synthetic series instead of loading CSV");
  cmd->add_option("--synth-nodes", f.nodes, "Synthetic node count")->capture_default_str();
  cmd->add_option("--synth-days", f.days, "Synthetic day count")->capture_default_str();
  cmd->add_option("--synth-cadence", f.cadence, "Synthetic cadence in minutes")
      ->capture_default_str();
  cmd->add_option("--synth-missing", f.missing, "Synthetic missingness rate")
      ->capture_default_str();
  cmd->add_option("--synth-noise", f.noise, "Synthetic noise sigma")->capture_default_str();
}

data::TrafficSeries load_series(const std::string& data_path, const std::string& mask_path,
                                const SynthFlags& synth, std::uint64_t seed) {
  if (synth.enabled) {
    data::SynthSpec spec;
    spec.nodes = synth.nodes;
    spec.days = synth.days;
    spec.cadence_minutes = synth.cadence;
    spec.missing_rate = synth.missing;
    spec.noise = synth.noise;
    spec.seed = seed;
    return data::synth_series(spec);
  }
  if (data_path.empty()) {
    throw ValueError("no input: pass --data <csv> or --synthetic");
  }
  std::optional<std::string> mask;
  if (!mask_path.empty()) mask = mask_path;
  return data::load_csv(data_path, mask);
}

std::optional<Tensor> window_time(const model::WeaverConfig& cfg, const data::Window& w) {
  if (!cfg.use_time_metadata) return std::nullopt;
  return train::window_time_features(w);
}

const data::WindowedSplit& pick_split(const data::SplitDataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "val") return ds.val;
  if (name == "test") return ds.test;
  throw ValueError("unknown split '" + name + "'");
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& out,
               double inject) {
  if (inject != 0.0) kron::testing::set_efficient_perturbation(inject);
  auto results = verify::run_suite(suite, seed);
  bool all_pass = true;
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, (r.suite + "." + r.name).size());
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "PASS  " : "FAIL  ") << std::left
              << std::setw(int(width) + 2) << (r.suite + "." + r.name) << r.detail << '\n';
  }
  std::cout << (all_pass ? "verify: all properties passed\n"
                         : "verify: at least one property failed\n");
  if (!out.empty()) {
    csv::Table table;
    table.header = {"suite", "property", "status", "detail"};
    for (const auto& r : results) {
      table.append({r.suite, r.name, r.pass ? "pass" : "fail", r.detail});
    }
    csv::write_file(out, table);
  }
  return all_pass ? kExitOk : kExitFailure;
}

int cmd_bench_kmv(const bench::BenchOptions& opts, const std::string& out) {
  std::cout << "N,P,E,H,d_head: timing basic vs efficient P^2-KMV ("
            << opts.trials << " trials, " << opts.warmup << " warmup)\n";
  bool gate_failed = false;
  auto records = bench::run_kmv_grid(opts, [&](const bench::BenchRecord& r) {
    if (r.skipped) {
      std::cerr << "skip N=" << r.n << " H=" << r.h << " d_head=" << r.d_head << ": "
                << r.note << '\n';
      if (r.note.rfind("equivalence", 0) == 0) gate_failed = true;
      return;
    }
    std::cout << "N=" << std::setw(4) << r.n << " H=" << r.h << " d_head=" << std::setw(2)
              << r.d_head << "  basic " << std::setw(12) << std::llround(r.t_basic_ns)
              << " ns (median " << std::llround(r.t_basic_median_ns) << ")  efficient "
              << std::setw(12) << std::llround(r.t_efficient_ns) << " ns (median "
              << std::llround(r.t_efficient_median_ns) << ")  speedup " << std::fixed
              << std::setprecision(2) << r.speedup << std::defaultfloat << "  max_abs_diff "
              << r.max_abs_diff << '\n';
  });
  if (!out.empty()) csv::write_file(out, bench::to_csv(records));
  return gate_failed ? kExitFailure : kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& mask_path, const SynthFlags& synth, std::uint64_t seed,
              const train::TrainOptions& topts, const std::string& out_dir) {
  model::WeaverConfig cfg = model::WeaverConfig::from_file(config_path);
  data::TrafficSeries series = load_series(data_path, mask_path, synth, seed);
  if (series.nodes() != cfg.nodes || series.channels() != cfg.channels) {
    throw ValueError("config/data mismatch: data has " + std::to_string(series.nodes()) +
                     " nodes x " + std::to_string(series.channels()) + " channels, config " +
                     std::to_string(cfg.nodes) + " x " + std::to_string(cfg.channels));
  }
  auto ds = data::split_and_slice(series, cfg.history, cfg.horizon);

  Rng init_rng(seed);
  model::WeaverParameters params = model::WeaverParameters::init(cfg, init_rng);

  train::TrainOptions opts = topts;
  opts.seed = seed;
  csv::Table log;
  log.header = {"epoch", "lr", "train_mae", "val_mae", "best_val", "patience_left"};
  auto result = train::fit(params, cfg, ds.train, ds.val, ds.stats, opts,
                           [&](const train::EpochLog& e) {
                             std::cout << "epoch " << e.epoch << "  lr " << e.lr
                                       << "  train_mae " << e.train_mae << "  val_mae "
                                       << e.val_mae << '\n';
                             log.append({std::to_string(e.epoch), csv::format_double(e.lr),
                                         csv::format_double(e.train_mae),
                                         csv::format_double(e.val_mae),
                                         csv::format_double(e.best_val),
                                         std::to_string(e.patience_left)});
                           });
  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.wvr").string();
  model::save_checkpoint(ckpt, cfg, params);
  csv::write_file((fs::path(out_dir) / "training_log.csv").string(), log);
  std::cout << "initial val MAE " << result.initial_val_mae;
  if (!result.log.empty()) std::cout << ", final val MAE " << result.log.back().val_mae;
  std::cout << (result.early_stopped ? " (early stop)" : "") << "\ncheckpoint: " << ckpt
            << '\n';
  return kExitOk;
}

int cmd_forecast(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& mask_path, const SynthFlags& synth,
                 const std::string& split_name, std::uint64_t seed,
                 const std::string& out_dir) {
  auto [cfg, params] = model::load_checkpoint(ckpt_path);
  data::TrafficSeries series = load_series(data_path, mask_path, synth, seed);
  if (series.nodes() != cfg.nodes || series.channels() != cfg.channels) {
    throw ValueError("checkpoint/data shape mismatch");
  }
  auto ds = data::split_and_slice(series, cfg.history, cfg.horizon);
  const data::WindowedSplit& split = pick_split(ds, split_name);
  if (split.window_count() == 0) {
    throw ValueError("split '" + split_name + "' has no forecastable windows");
  }

  csv::Table preds;
  preds.header = {"window", "step", "node", "channel", "y_hat", "y", "mask"};
  data::Metrics model_metrics(cfg.horizon);
  data::Metrics persist_metrics(cfg.horizon);
  for (std::size_t i = 0; i < split.window_count(); ++i) {
    data::Window w = split.window(i);
    Tensor y_std = model::weaver_forward(w.x_std, window_time(cfg, w), params, cfg);
    Tensor y_hat = data::invert(y_std, ds.stats);
    model_metrics.add(w.y_raw, y_hat, w.y_mask);
    persist_metrics.add(w.y_raw, train::persistence_forecast(w), w.y_mask);
    for (std::size_t q = 0; q < cfg.horizon; ++q) {
      for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
        for (std::size_t cc = 0; cc < cfg.channels; ++cc) {
          const std::size_t idx = (q * cfg.nodes + nn) * cfg.channels + cc;
          preds.append({std::to_string(i), std::to_string(q + 1), std::to_string(nn),
                        std::to_string(cc), csv::format_double(y_hat[idx]),
                        csv::format_double(w.y_raw[idx]),
                        w.y_mask[idx] != 0.0 ? "1" : "0"});
        }
      }
    }
  }

  csv::Table table;
  table.header = {"model", "horizon", "mae", "mape_pct", "rmse", "count"};
  auto emit = [&](const std::string& name, const data::Metrics& m) {
    for (const auto& [label, step] : data::Metrics::horizon_labels(cfg.horizon,
                                                                   series.cadence_minutes)) {
      auto row = m.step(step);
      table.append({name, label, csv::format_double(row.mae),
                    csv::format_double(row.mape_pct), csv::format_double(row.rmse),
                    std::to_string(row.count)});
    }
    auto all = m.all();
    table.append({name, "all", csv::format_double(all.mae), csv::format_double(all.mape_pct),
                  csv::format_double(all.rmse), std::to_string(all.count)});
  };
  emit("weaver", model_metrics);
  emit("persistence", persist_metrics);

  fs::create_directories(out_dir);
  csv::write_file((fs::path(out_dir) / "predictions.csv").string(), preds);
  csv::write_file((fs::path(out_dir) / "metrics.csv").string(), table);
  const double model_mae = model_metrics.all().mae;
  const double persist_mae = persist_metrics.all().mae;
  std::cout << "split " << split_name << ": weaver MAE(all) " << model_mae
            << ", persistence MAE(all) " << persist_mae << '\n';
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& key_spec,
               const std::string& out) {
  if (inputs.empty()) throw ValueError("report: no input tables");
  auto normalize = [](std::string h) {
    std::string out_h;
    for (char c : h) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        out_h += char(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    return out_h;
  };
  csv::Table merged;
  std::set<std::string> seen_keys;
  std::vector<std::string> conflicts;
  for (const auto& path : inputs) {
    csv::Table t = csv::read_file(path);
    for (auto& h : t.header) h = normalize(h);
    if (merged.header.empty()) {
      merged.header = {"source"};
      merged.header.insert(merged.header.end(), t.header.begin(), t.header.end());
    } else {
      std::vector<std::string> expect(merged.header.begin() + 1, merged.header.end());
      if (t.header != expect) {
        throw ValueError("report: schema mismatch in " + path);
      }
    }
    std::vector<std::size_t> key_cols;
    if (key_spec.empty()) {
      key_cols.push_back(0);
    } else {
      std::stringstream ss(key_spec);
      std::string part;
      while (std::getline(ss, part, ',')) key_cols.push_back(t.column(normalize(part)));
    }
    const std::string source = fs::path(path).stem().string();
    for (const auto& row : t.rows) {
      std::string key = source;
      for (auto c : key_cols) key += "|" + row[c];
      if (!seen_keys.insert(key).second) conflicts.push_back(key);
      std::vector<std::string> merged_row = {source};
      merged_row.insert(merged_row.end(), row.begin(), row.end());
      merged.append(std::move(merged_row));
    }
  }
  if (!conflicts.empty()) {
    std::string msg = "report: duplicate keys:";
    for (const auto& k : conflicts) msg += " " + k;
    throw ValueError(msg);
  }
  if (!out.empty()) {
    csv::write_file(out, merged);
  } else {
    csv::write(std::cout, merged);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weaver: Kronecker-factorized spatiotemporal attention toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Run invariant property suites");
  std::string suite = "all";
  std::string verify_out;
  double inject = 0.0;
  verify_cmd->add_option("--suite", suite, "all|kron|attention|dictionary|model|data")
      ->capture_default_str();
  verify_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  verify_cmd->add_option("--out", verify_out, "Write a CSV summary");
  verify_cmd->add_option("--inject-perturbation", inject,
                         "Test fixture: perturb the efficient KMV kernel")
      ->group("");

  // bench-kmv
  auto* bench_cmd = app.add_subcommand("bench-kmv", "Time basic vs efficient P^2-KMV");
  bench::BenchOptions bopts;
  std::string bench_out = "kmv_bench.csv";
  double bench_inject = 0.0;
  bench_cmd->add_option("--inject-perturbation", bench_inject,
                        "Test fixture: perturb the efficient KMV kernel")
      ->group("");
  bench_cmd->add_option("--nodes", bopts.nodes, "Spatial sizes")->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--heads", bopts.heads, "Head counts")->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--head-dims", bopts.head_dims, "Head dims")->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--history", bopts.history, "History length P")->capture_default_str();
  bench_cmd->add_option("--batch", bopts.batch, "Batch folded into the feature width")
      ->capture_default_str();
  bench_cmd->add_option("--trials", bopts.trials, "Timing trials")->capture_default_str();
  bench_cmd->add_option("--warmup", bopts.warmup, "Warmup runs")->capture_default_str();
  bench_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "CSV output path")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on masked traffic series");
  std::string config_path, data_path, mask_path, train_out = ".";
  SynthFlags train_synth;
  train::TrainOptions topts;
  train_cmd->add_option("--config", config_path, "Model config (key=value)")->required();
  train_cmd->add_option("--data", data_path, "Traffic CSV");
  train_cmd->add_option("--mask", mask_path, "Mask CSV");
  add_synth_flags(train_cmd, train_synth);
  train_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--epochs", topts.epochs, "Max epochs")->capture_default_str();
  train_cmd->add_option("--patience", topts.patience, "Early-stopping patience")
      ->capture_default_str();
  train_cmd->add_option("--min-delta", topts.min_delta, "Min val-loss decrease")
      ->capture_default_str();
  train_cmd->add_option("--lr", topts.lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--lr-decay", topts.lr_decay, "Per-epoch decay")->capture_default_str();
  train_cmd->add_option("--batch", topts.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--out", train_out, "Output directory")->capture_default_str();

  // forecast
  auto* fc_cmd = app.add_subcommand("forecast", "Forecast from a checkpoint");
  std::string ckpt_path, fc_data, fc_mask, fc_split = "test", fc_out = ".";
  SynthFlags fc_synth;
  fc_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint path")->required();
  fc_cmd->add_option("--data", fc_data, "Traffic CSV");
  fc_cmd->add_option("--mask", fc_mask, "Mask CSV");
  add_synth_flags(fc_cmd, fc_synth);
  fc_cmd->add_option("--split", fc_split, "train|val|test")->capture_default_str();
  fc_cmd->add_option("--seed", seed, "Random seed (synthetic generation)")
      ->capture_default_str();
  fc_cmd->add_option("--out", fc_out, "Output directory")->capture_default_str();

  // report
  auto* rep_cmd = app.add_subcommand("report", "Merge metric/bench CSVs");
  std::vector<std::string> rep_inputs;
  std::string rep_key, rep_out;
  rep_cmd->add_option("inputs", rep_inputs, "Input CSV tables")->required();
  rep_cmd->add_option("--key", rep_key, "Key columns (default: first column)");
  rep_cmd->add_option("--out", rep_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*verify_cmd) return cmd_verify(suite, seed, verify_out, inject);
    if (*bench_cmd) {
      if (bench_inject != 0.0) kron::testing::set_efficient_perturbation(bench_inject);
      bopts.seed = seed;
      return cmd_bench_kmv(bopts, bench_out);
    }
    if (*train_cmd) {
      return cmd_train(config_path, data_path, mask_path, train_synth, seed, topts,
                       train_out);
    }
    if (*fc_cmd) {
      return cmd_forecast(ckpt_path, fc_data, fc_mask, fc_synth, fc_split, seed, fc_out);
    }
    if (*rep_cmd) return cmd_report(rep_inputs, rep_key, rep_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
