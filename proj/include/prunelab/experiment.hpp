#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prunelab/checkpoint.hpp"
#include "prunelab/prune.hpp"

namespace prunelab {

// End-to-end pruning workflows runnable inside a sweep.
enum class SweepMethod { imp, snip, synflow, drive };
std::string to_string(SweepMethod m);
SweepMethod parse_sweep_method(const std::string& name);

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx
  // synthetic
  int classes = 10;
  int64_t dim = 784;
  int64_t train_per_class = 256;
  int64_t test_per_class = 64;
  double separation = 6.0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;

  std::string label() const;  // value for the CSV "dataset" column
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string model = "mlp:784-300-100-10";
  DatasetConfig dataset;
  std::vector<SweepMethod> methods;
  std::vector<double> sparsities;
  std::vector<uint64_t> seeds;
  int prune_iters = 100;         // N for SynFlow and the DRIVE stage
  int pretrain_epochs = 1;       // E, DRIVE's early training
  int imp_cycles = 5;
  int imp_epochs_per_cycle = 1;
  int total_epochs = 6;          // shared training budget per run
  OptimizerSpec optimizer;
  int64_t batch_size = 64;
  std::string out_dir = "runs";
  int workers = 1;

  void validate() const;
};

// Plain-text key = value document with dotted keys (see README). Unknown
// keys are a ConfigError so typos never pass silently.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

struct RunResult {
  std::string method;
  std::string model;
  std::string dataset;
  double target_sparsity = 0.0;
  double achieved_sparsity = 0.0;
  uint64_t seed = 0;
  int pretrain_epochs = 0;
  int train_epochs = 0;
  double test_accuracy = 0.0;
  double prune_seconds = 0.0;
  double train_seconds = 0.0;
  std::vector<int> collapsed_layers;
  std::string error;  // non-empty when the run failed

  bool collapsed() const { return !collapsed_layers.empty(); }
};

extern const char* kResultsCsvHeader;
std::string to_csv_row(const RunResult& r);
std::vector<RunResult> read_results_csv(const std::string& path);

// Splits the training budget so pretraining is charged against it.
std::pair<int, int> allocate_epochs(int total, int pretrain);

// Fraction of argmax-correct predictions; ties pick the lowest class index.
double evaluate(const Model& model, const Dataset& dataset);

// Builds the model named by `selector` ("mlp:784-300-100-10",
// "mlp_nobias:...", "conv:small", or a canonical model-spec text) with its
// input shape taken from the data.
ModelSpec model_spec_from_selector(const std::string& selector,
                                   const Shape& example_shape);

struct SweepDatasets {
  Dataset train;
  Dataset test;
};
SweepDatasets load_sweep_datasets(const ExperimentConfig& config,
                                  uint64_t seed);

// One (method, sparsity, seed) cell: build, prune via the method's pipeline,
// train the sparse model for the remaining budget, evaluate.
RunResult execute_run(const ExperimentConfig& config, SweepMethod method,
                      double kappa, uint64_t seed, const SweepDatasets& data);

using RunCallback =
    std::function<void(const RunResult&, size_t done, size_t total)>;

// Runs every (method, sparsity, seed) combination, appending one CSV row per
// finished run to <out_dir>/<name>_results.csv (flushed immediately, so an
// interrupted sweep leaves the completed rows parseable). Per-run failures
// are recorded in the row; the sweep continues.
std::vector<RunResult> run_sweep(const ExperimentConfig& config,
                                 const RunCallback& callback = {});

std::string results_csv_path(const ExperimentConfig& config);

// Pivot table: methods as rows, sparsities as columns, mean ±std accuracy
// over seeds in percent. The best early method (snip/synflow/drive) per
// column is starred; cells with collapsed runs are marked untrainable.
std::string format_report(const std::vector<RunResult>& results);
void report(const std::vector<RunResult>& results, const std::string& out_path);

}  // namespace prunelab
