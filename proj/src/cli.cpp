#include "prunelab/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

void apply_overrides(const Command& cmd, ExperimentConfig& cfg) {
  if (cmd.seed) cfg.seeds = {*cmd.seed};
  if (cmd.out_dir) cfg.out_dir = *cmd.out_dir;
  if (cmd.workers) cfg.workers = *cmd.workers;
}

void progress(bool quiet, const RunResult& r, size_t done, size_t total) {
  if (quiet) return;
  if (!r.error.empty()) {
    std::fprintf(stderr, "[%zu/%zu] %s kappa=%.4g seed=%llu FAILED: %s\n",
                 done, total, r.method.c_str(), r.target_sparsity,
                 static_cast<unsigned long long>(r.seed), r.error.c_str());
    return;
  }
  std::fprintf(stderr,
               "[%zu/%zu] %s kappa=%.4g seed=%llu acc=%.4f "
               "prune=%.2fs train=%.2fs%s\n",
               done, total, r.method.c_str(), r.target_sparsity,
               static_cast<unsigned long long>(r.seed), r.test_accuracy,
               r.prune_seconds, r.train_seconds,
               r.collapsed() ? " [collapse]" : "");
}

int do_train(const Command& cmd) {
  ExperimentConfig cfg = parse_config_file(cmd.config_path);
  apply_overrides(cmd, cfg);
  std::filesystem::create_directories(cfg.out_dir);
  const uint64_t seed = cfg.seeds.front();
  SweepDatasets data = load_sweep_datasets(cfg, seed);
  Model model(model_spec_from_selector(cfg.model, data.train.example_shape()),
              seed);
  OptimizerState state = OptimizerState::from_spec(cfg.optimizer);
  const double secs =
      train_epochs(model, data.train, cfg.total_epochs, 0, state,
                   cfg.optimizer.schedule, cfg.batch_size,
                   substream_seed(seed, "shuffle"));
  const double acc = evaluate(model, data.test);
  const std::string ckpt =
      (std::filesystem::path(cfg.out_dir) / (cfg.name + "_dense.ckpt")).string();
  save_checkpoint(model, &state, ckpt);
  if (!cmd.quiet)
    std::fprintf(stderr, "trained %d epochs in %.2fs\n", cfg.total_epochs, secs);
  std::printf("test_accuracy=%.6f checkpoint=%s\n", acc, ckpt.c_str());
  return kExitOk;
}

int do_prune(const Command& cmd) {
  ExperimentConfig cfg = parse_config_file(cmd.config_path);
  apply_overrides(cmd, cfg);
  std::filesystem::create_directories(cfg.out_dir);
  const SweepMethod method = parse_sweep_method(cmd.method);
  const double kappa = cmd.sparsity;
  if (!(kappa >= 0.0 && kappa < 1.0))
    throw InvalidSparsity("sparsity must lie in [0,1), got " +
                          std::to_string(kappa));
  const uint64_t seed = cfg.seeds.front();
  SweepDatasets data = load_sweep_datasets(cfg, seed);
  Model model(model_spec_from_selector(cfg.model, data.train.example_shape()),
              seed);

  PruneReport report;
  switch (method) {
    case SweepMethod::drive:
      report = drive_pipeline(model, data.train, cfg.pretrain_epochs,
                              make_schedule(kappa, cfg.prune_iters),
                              cfg.optimizer, cfg.batch_size, seed)
                   .report;
      break;
    case SweepMethod::imp:
      report = imp_pipeline(model, data.train, cfg.imp_cycles,
                            cfg.imp_epochs_per_cycle, kappa, cfg.optimizer,
                            cfg.batch_size, seed);
      break;
    case SweepMethod::snip:
      report = snip_pipeline(model, data.train, kappa, cfg.batch_size,
                             substream_seed(seed, "score"));
      break;
    case SweepMethod::synflow:
      report = synflow_pipeline(model, kappa, cfg.prune_iters);
      break;
  }

  const std::string ckpt =
      (std::filesystem::path(cfg.out_dir) /
       (cfg.name + "_" + cmd.method + "_pruned.ckpt"))
          .string();
  save_checkpoint(model, nullptr, ckpt);
  std::printf("achieved_sparsity=%.6f prune_seconds=%.3f collapsed_layers=%zu "
              "checkpoint=%s\n",
              report.achieved_sparsity, report.prune_seconds,
              report.collapsed_layers.size(), ckpt.c_str());
  return kExitOk;
}

int do_sweep(const Command& cmd) {
  ExperimentConfig cfg = parse_config_file(cmd.config_path);
  apply_overrides(cmd, cfg);
  const bool quiet = cmd.quiet;
  std::vector<RunResult> results =
      run_sweep(cfg, [quiet](const RunResult& r, size_t done, size_t total) {
        progress(quiet, r, done, total);
      });
  const std::string pivot_path =
      (std::filesystem::path(cfg.out_dir) / (cfg.name + "_report.txt")).string();
  report(results, pivot_path);
  std::printf("results=%s\nreport=%s\n", results_csv_path(cfg).c_str(),
              pivot_path.c_str());
  return kExitOk;
}

int do_report(const Command& cmd) {
  std::vector<RunResult> results = read_results_csv(cmd.results_path);
  if (results.empty())
    throw EmptyResults(cmd.results_path + " contains no result rows");
  const std::string text = format_report(results);
  if (!cmd.report_out.empty()) {
    report(results, cmd.report_out);
    std::printf("report=%s\n", cmd.report_out.c_str());
  } else {
    std::fputs(text.c_str(), stdout);
  }
  return kExitOk;
}

void build_parser(CLI::App& app, Command& cmd) {
  app.require_subcommand(1);

  auto add_global = [&](CLI::App* sub) {
    sub->add_option("--seed", [&cmd](const std::vector<std::string>& v) {
      cmd.seed = std::stoull(v.front());
      return true;
    }, "override the config's seed list with a single seed");
    sub->add_option("--out-dir", [&cmd](const std::vector<std::string>& v) {
      cmd.out_dir = v.front();
      return true;
    }, "override the config's output directory");
    sub->add_option("--workers", [&cmd](const std::vector<std::string>& v) {
      cmd.workers = std::stoi(v.front());
      return true;
    }, "parallel runs within a sweep");
    sub->add_flag("--quiet", cmd.quiet, "suppress progress lines");
  };

  CLI::App* train = app.add_subcommand("train", "train the dense model");
  train->add_option("--config", cmd.config_path, "experiment config file")
      ->required();
  train->callback([&cmd] { cmd.kind = Command::Kind::train; });
  add_global(train);

  CLI::App* prune = app.add_subcommand("prune", "produce one sparse model");
  prune->add_option("--config", cmd.config_path, "experiment config file")
      ->required();
  prune->add_option("--method", cmd.method, "imp | snip | synflow | drive")
      ->required();
  prune->add_option("--sparsity", cmd.sparsity, "fraction in [0,1)")
      ->required();
  prune->callback([&cmd] { cmd.kind = Command::Kind::prune; });
  add_global(prune);

  CLI::App* sweep =
      app.add_subcommand("sweep", "run every method x sparsity x seed");
  sweep->add_option("--config", cmd.config_path, "experiment config file")
      ->required();
  sweep->callback([&cmd] { cmd.kind = Command::Kind::sweep; });
  add_global(sweep);

  CLI::App* rep = app.add_subcommand("report", "pivot a results CSV");
  rep->add_option("--results", cmd.results_path, "results CSV path")
      ->required();
  rep->add_option("--out", cmd.report_out, "write the pivot here");
  rep->callback([&cmd] { cmd.kind = Command::Kind::report; });
  add_global(rep);
}

}  // namespace

Command parse_args(const std::vector<std::string>& args) {
  Command cmd;
  CLI::App app{"prunelab: early pruning laboratory"};
  build_parser(app, cmd);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  app.parse(std::move(reversed));  // CLI11 consumes back-to-front
  if (cmd.kind == Command::Kind::prune &&
      !(cmd.sparsity >= 0.0 && cmd.sparsity < 1.0))
    throw InvalidValue("sparsity must lie in [0,1), got " +
                       std::to_string(cmd.sparsity));
  return cmd;
}

int run_command(const Command& cmd) {
  switch (cmd.kind) {
    case Command::Kind::train: return do_train(cmd);
    case Command::Kind::prune: return do_prune(cmd);
    case Command::Kind::sweep: return do_sweep(cmd);
    case Command::Kind::report: return do_report(cmd);
  }
  return kExitUsage;
}

int cli_main(int argc, const char* const* argv) {
  Command cmd;
  CLI::App app{"prunelab: early pruning laboratory"};
  build_parser(app, cmd);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  try {
    if (cmd.kind == Command::Kind::prune &&
        !(cmd.sparsity >= 0.0 && cmd.sparsity < 1.0))
      throw InvalidValue("sparsity must lie in [0,1), got " +
                         std::to_string(cmd.sparsity));
    return run_command(cmd);
  } catch (const InvalidValue& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const InvalidSparsity& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRunFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRunFailure;
  }
}

}  // namespace prunelab
