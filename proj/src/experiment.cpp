#include "prunelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: " + v);
  }
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: " + v);
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(SweepMethod m) {
  switch (m) {
    case SweepMethod::imp: return "imp";
    case SweepMethod::snip: return "snip";
    case SweepMethod::synflow: return "synflow";
    case SweepMethod::drive: return "drive";
  }
  return "?";
}

SweepMethod parse_sweep_method(const std::string& name) {
  if (name == "imp") return SweepMethod::imp;
  if (name == "snip") return SweepMethod::snip;
  if (name == "synflow") return SweepMethod::synflow;
  if (name == "drive") return SweepMethod::drive;
  throw InvalidValue("unknown method: " + name +
                     " (expected imp, snip, synflow, or drive)");
}

std::string DatasetConfig::label() const {
  if (kind == "synthetic")
    return "synthetic-k" + std::to_string(classes) + "-d" + std::to_string(dim);
  return std::filesystem::path(train_images).stem().string();
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("config lists no methods");
  if (sparsities.empty()) throw ConfigError("config lists no sparsities");
  if (seeds.empty()) throw ConfigError("config lists no seeds");
  for (double k : sparsities)
    if (!(k >= 0.0 && k < 1.0))
      throw InvalidSparsity("sparsity must lie in [0,1), got " +
                            std::to_string(k));
  if (total_epochs < 1) throw ConfigError("total_epochs must be positive");
  if (pretrain_epochs < 0 || pretrain_epochs >= total_epochs)
    throw BudgetExceeded("pretrain_epochs must satisfy 0 <= E < total_epochs");
  for (SweepMethod m : methods)
    if (m == SweepMethod::imp &&
        imp_cycles * imp_epochs_per_cycle > total_epochs)
      throw BudgetExceeded("IMP cycles exceed the training budget");
  if (prune_iters < 1) throw ConfigError("prune_iters must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (workers < 1) throw ConfigError("workers must be positive");
  if (dataset.kind != "synthetic" && dataset.kind != "idx")
    throw ConfigError("dataset.kind must be synthetic or idx");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "name") cfg.name = value;
    else if (key == "model") cfg.model = value;
    else if (key == "dataset.kind") cfg.dataset.kind = value;
    else if (key == "dataset.classes")
      cfg.dataset.classes = static_cast<int>(to_int(key, value));
    else if (key == "dataset.dim") cfg.dataset.dim = to_int(key, value);
    else if (key == "dataset.train_per_class")
      cfg.dataset.train_per_class = to_int(key, value);
    else if (key == "dataset.test_per_class")
      cfg.dataset.test_per_class = to_int(key, value);
    else if (key == "dataset.separation")
      cfg.dataset.separation = to_double(key, value);
    else if (key == "dataset.train_images") cfg.dataset.train_images = value;
    else if (key == "dataset.train_labels") cfg.dataset.train_labels = value;
    else if (key == "dataset.test_images") cfg.dataset.test_images = value;
    else if (key == "dataset.test_labels") cfg.dataset.test_labels = value;
    else if (key == "methods") {
      cfg.methods.clear();
      for (const auto& m : split_list(value))
        cfg.methods.push_back(parse_sweep_method(m));
    } else if (key == "sparsities") {
      cfg.sparsities.clear();
      for (const auto& s : split_list(value))
        cfg.sparsities.push_back(to_double(key, s));
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& s : split_list(value))
        cfg.seeds.push_back(static_cast<uint64_t>(to_int(key, s)));
    } else if (key == "prune_iters")
      cfg.prune_iters = static_cast<int>(to_int(key, value));
    else if (key == "pretrain_epochs")
      cfg.pretrain_epochs = static_cast<int>(to_int(key, value));
    else if (key == "imp_cycles")
      cfg.imp_cycles = static_cast<int>(to_int(key, value));
    else if (key == "imp_epochs_per_cycle")
      cfg.imp_epochs_per_cycle = static_cast<int>(to_int(key, value));
    else if (key == "total_epochs")
      cfg.total_epochs = static_cast<int>(to_int(key, value));
    else if (key == "optimizer.method") {
      if (value == "sgd") cfg.optimizer.method = OptimMethod::sgd;
      else if (value == "adam") cfg.optimizer.method = OptimMethod::adam;
      else throw ConfigError("optimizer.method must be sgd or adam");
    } else if (key == "optimizer.momentum")
      cfg.optimizer.momentum = to_double(key, value);
    else if (key == "optimizer.beta1") cfg.optimizer.beta1 = to_double(key, value);
    else if (key == "optimizer.beta2") cfg.optimizer.beta2 = to_double(key, value);
    else if (key == "optimizer.epsilon")
      cfg.optimizer.epsilon = to_double(key, value);
    else if (key == "lr.kind") {
      if (value == "constant") cfg.optimizer.schedule = ConstantLr{};
      else if (value == "step") cfg.optimizer.schedule = StepDecayLr{};
      else if (value == "cosine") cfg.optimizer.schedule = CosineLr{};
      else throw ConfigError("lr.kind must be constant, step, or cosine");
    } else if (key == "lr.eta0") {
      const double eta = to_double(key, value);
      std::visit([eta](auto& s) { s.eta0 = eta; }, cfg.optimizer.schedule);
    } else if (key == "lr.factor") {
      auto* s = std::get_if<StepDecayLr>(&cfg.optimizer.schedule);
      if (!s) throw ConfigError("lr.factor applies to lr.kind = step");
      s->factor = to_double(key, value);
    } else if (key == "lr.milestones") {
      auto* s = std::get_if<StepDecayLr>(&cfg.optimizer.schedule);
      if (!s) throw ConfigError("lr.milestones applies to lr.kind = step");
      s->milestones.clear();
      for (const auto& m : split_list(value))
        s->milestones.push_back(static_cast<int>(to_int(key, m)));
    } else if (key == "lr.total_epochs") {
      auto* s = std::get_if<CosineLr>(&cfg.optimizer.schedule);
      if (!s) throw ConfigError("lr.total_epochs applies to lr.kind = cosine");
      s->total_epochs = static_cast<int>(to_int(key, value));
    } else if (key == "batch_size")
      cfg.batch_size = to_int(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "workers")
      cfg.workers = static_cast<int>(to_int(key, value));
    else
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key: " +
                        key);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

const char* kResultsCsvHeader =
    "method,model,dataset,target_sparsity,achieved_sparsity,seed,"
    "pretrain_epochs,train_epochs,test_accuracy,prune_seconds,train_seconds,"
    "collapsed_layers";

std::string to_csv_row(const RunResult& r) {
  std::ostringstream os;
  os << r.method << ',' << r.model << ',' << r.dataset << ','
     << format_double(r.target_sparsity) << ','
     << format_double(r.achieved_sparsity) << ',' << r.seed << ','
     << r.pretrain_epochs << ',' << r.train_epochs << ','
     << format_double(r.test_accuracy) << ','
     << format_double(r.prune_seconds) << ','
     << format_double(r.train_seconds) << ',';
  if (!r.error.empty()) {
    std::string msg = r.error;
    for (char& c : msg)
      if (c == ',' || c == '\n') c = ' ';
    os << "error:" << msg;
  } else {
    for (size_t i = 0; i < r.collapsed_layers.size(); ++i)
      os << (i ? ";" : "") << "layer" << r.collapsed_layers[i];
  }
  return os.str();
}

std::vector<RunResult> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open results " + path);
  std::string line;
  if (!std::getline(f, line) || trim(line) != kResultsCsvHeader)
    throw CorruptPayload(path + ": missing or unexpected CSV header");
  std::vector<RunResult> out;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    auto cells = split_list(line, ',');
    if (cells.size() != 12)
      throw CorruptPayload(path + ": row with " + std::to_string(cells.size()) +
                           " cells: " + line);
    RunResult r;
    r.method = cells[0];
    r.model = cells[1];
    r.dataset = cells[2];
    r.target_sparsity = to_double("target_sparsity", cells[3]);
    r.achieved_sparsity = to_double("achieved_sparsity", cells[4]);
    r.seed = static_cast<uint64_t>(to_int("seed", cells[5]));
    r.pretrain_epochs = static_cast<int>(to_int("pretrain_epochs", cells[6]));
    r.train_epochs = static_cast<int>(to_int("train_epochs", cells[7]));
    r.test_accuracy = to_double("test_accuracy", cells[8]);
    r.prune_seconds = to_double("prune_seconds", cells[9]);
    r.train_seconds = to_double("train_seconds", cells[10]);
    if (cells[11].rfind("error:", 0) == 0) {
      r.error = cells[11].substr(6);
    } else if (!cells[11].empty()) {
      for (const auto& l : split_list(cells[11], ';'))
        if (l.rfind("layer", 0) == 0)
          r.collapsed_layers.push_back(
              static_cast<int>(to_int("collapsed_layers", l.substr(5))));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::pair<int, int> allocate_epochs(int total, int pretrain) {
  if (pretrain < 0 || pretrain >= total)
    throw BudgetExceeded("pretraining " + std::to_string(pretrain) +
                         " epochs does not fit a budget of " +
                         std::to_string(total));
  return {pretrain, total - pretrain};
}

double evaluate(const Model& model, const Dataset& dataset) {
  if (dataset.inputs.size() == 0 || dataset.labels.empty())
    throw EmptyDataset("evaluate: dataset is empty");
  const int64_t n = dataset.count();
  const int64_t chunk = 512;
  int64_t correct = 0;
  std::vector<int64_t> idx;
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t take = std::min(chunk, n - start);
    idx.resize(static_cast<size_t>(take));
    for (int64_t i = 0; i < take; ++i) idx[static_cast<size_t>(i)] = start + i;
    Batch b = dataset.gather(idx);
    Tensor logits = forward_logits(model, b.x);
    const int64_t classes = logits.dim(1);
    for (int64_t i = 0; i < take; ++i) {
      const float* row = logits.data() + i * classes;
      int best = 0;
      for (int64_t k = 1; k < classes; ++k)
        if (row[k] > row[best]) best = static_cast<int>(k);
      if (best == b.labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ModelSpec model_spec_from_selector(const std::string& selector,
                                   const Shape& example_shape) {
  if (selector.rfind("input=", 0) == 0) return parse_model_text(selector);
  if (selector == "conv:small") {
    ModelSpec spec = small_conv_spec();
    if (example_shape != spec.input_shape)
      throw InvalidSpec("conv:small expects 1x28x28 input, dataset provides " +
                        shape_str(example_shape));
    return spec;
  }
  const bool nobias = selector.rfind("mlp_nobias:", 0) == 0;
  if (selector.rfind("mlp:", 0) == 0 || nobias) {
    const std::string dims = selector.substr(selector.find(':') + 1);
    std::vector<int64_t> widths;
    for (const auto& d : split_list(dims, '-'))
      widths.push_back(to_int("model", d));
    if (widths.size() < 2)
      throw InvalidSpec("mlp selector needs at least two widths");
    if (!example_shape.empty() && shape_numel(example_shape) != widths.front())
      throw InvalidSpec("model expects " + std::to_string(widths.front()) +
                        " inputs, dataset provides " +
                        shape_str(example_shape));
    return mlp_spec(widths, static_cast<int>(widths.back()), !nobias,
                    example_shape);
  }
  throw InvalidSpec("unknown model selector: " + selector);
}

SweepDatasets load_sweep_datasets(const ExperimentConfig& config,
                                  uint64_t seed) {
  SweepDatasets out;
  const DatasetConfig& d = config.dataset;
  if (d.kind == "synthetic") {
    std::tie(out.train, out.test) =
        synth_gaussians_split(d.classes, d.dim, d.train_per_class,
                              d.test_per_class, seed, d.separation);
  } else {
    out.train = load_idx(d.train_images, d.train_labels, std::nullopt, "train");
    out.test = load_idx(d.test_images, d.test_labels, out.train.stats, "test");
  }
  return out;
}

RunResult execute_run(const ExperimentConfig& config, SweepMethod method,
                      double kappa, uint64_t seed, const SweepDatasets& data) {
  RunResult r;
  r.method = to_string(method);
  r.model = config.model;
  r.dataset = config.dataset.label();
  r.target_sparsity = kappa;
  r.seed = seed;

  try {
    ModelSpec spec =
        model_spec_from_selector(config.model, data.train.example_shape());
    Model model(spec, seed);

    const uint64_t shuffle_seed = substream_seed(seed, "shuffle");
    const uint64_t score_seed = substream_seed(seed, "score");

    double train_seconds = 0.0;
    switch (method) {
      case SweepMethod::drive: {
        auto [pre, post] =
            allocate_epochs(config.total_epochs, config.pretrain_epochs);
        DriveResult res =
            drive_pipeline(model, data.train, pre,
                           make_schedule(kappa, config.prune_iters),
                           config.optimizer, config.batch_size, seed);
        train_seconds += res.pretrain_seconds;
        // training resumes where pretraining stopped, optimizer state intact
        train_seconds +=
            train_epochs(model, data.train, post, pre, res.optimizer,
                         config.optimizer.schedule, config.batch_size,
                         substream_seed(seed, "shuffle"));
        r.pretrain_epochs = pre;
        r.train_epochs = post;
        r.prune_seconds = res.report.prune_seconds;
        r.achieved_sparsity = res.report.achieved_sparsity;
        r.collapsed_layers = res.report.collapsed_layers;
        break;
      }
      case SweepMethod::imp: {
        const int internal = config.imp_cycles * config.imp_epochs_per_cycle;
        if (internal > config.total_epochs)
          throw BudgetExceeded("IMP cycles exceed the training budget");
        PruneReport report = imp_pipeline(
            model, data.train, config.imp_cycles, config.imp_epochs_per_cycle,
            kappa, config.optimizer, config.batch_size, seed);
        const int post = config.total_epochs - internal;
        OptimizerState state = OptimizerState::from_spec(config.optimizer);
        train_seconds +=
            train_epochs(model, data.train, post, 0, state,
                         config.optimizer.schedule, config.batch_size,
                         shuffle_seed);
        r.pretrain_epochs = internal;
        r.train_epochs = post;
        r.prune_seconds = report.prune_seconds;
        r.achieved_sparsity = report.achieved_sparsity;
        r.collapsed_layers = report.collapsed_layers;
        break;
      }
      case SweepMethod::snip:
      case SweepMethod::synflow: {
        PruneReport report =
            method == SweepMethod::snip
                ? snip_pipeline(model, data.train, kappa, config.batch_size,
                                score_seed)
                : synflow_pipeline(model, kappa, config.prune_iters);
        OptimizerState state = OptimizerState::from_spec(config.optimizer);
        train_seconds +=
            train_epochs(model, data.train, config.total_epochs, 0, state,
                         config.optimizer.schedule, config.batch_size,
                         shuffle_seed);
        r.pretrain_epochs = 0;
        r.train_epochs = config.total_epochs;
        r.prune_seconds = report.prune_seconds;
        r.achieved_sparsity = report.achieved_sparsity;
        r.collapsed_layers = report.collapsed_layers;
        break;
      }
    }
    r.train_seconds = train_seconds;
    r.test_accuracy = evaluate(model, data.test);
  } catch (const std::exception& e) {
    r.error = e.what();
    r.test_accuracy = std::nan("");
  }
  return r;
}

std::string results_csv_path(const ExperimentConfig& config) {
  return (std::filesystem::path(config.out_dir) /
          (config.name + "_results.csv"))
      .string();
}

std::vector<RunResult> run_sweep(const ExperimentConfig& config,
                                 const RunCallback& callback) {
  config.validate();
  std::filesystem::create_directories(config.out_dir);
  const std::string csv_path = results_csv_path(config);
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path + " for writing");
  csv << kResultsCsvHeader << "\n" << std::flush;

  struct Cell {
    SweepMethod method;
    double kappa;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (SweepMethod m : config.methods)
    for (double k : config.sparsities)
      for (uint64_t s : config.seeds) cells.push_back({m, k, s});

  // datasets depend only on the seed, so share them across methods/kappas
  std::map<uint64_t, SweepDatasets> datasets;
  for (uint64_t s : config.seeds)
    if (!datasets.count(s)) datasets.emplace(s, load_sweep_datasets(config, s));

  std::vector<RunResult> results(cells.size());
  std::mutex io_mutex;
  size_t next = 0;
  size_t done = 0;
  std::mutex next_mutex;

  auto worker = [&]() {
    for (;;) {
      size_t i;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= cells.size()) return;
        i = next++;
      }
      const Cell& c = cells[i];
      RunResult r = execute_run(config, c.method, c.kappa, c.seed,
                                datasets.at(c.seed));
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        results[i] = r;
        csv << to_csv_row(r) << "\n" << std::flush;
        ++done;
        if (callback) callback(r, done, cells.size());
      }
    }
  };

  const int n_workers =
      std::max(1, std::min<int>(config.workers,
                                static_cast<int>(cells.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

namespace {

struct CellStats {
  std::vector<double> accs;
  bool any_collapse = false;
  bool any_error = false;
};

}  // namespace

std::string format_report(const std::vector<RunResult>& results) {
  if (results.empty()) throw EmptyResults("no results to report");

  std::vector<std::string> methods;
  std::vector<double> sparsities;
  for (const auto& r : results) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(sparsities.begin(), sparsities.end(), r.target_sparsity) ==
        sparsities.end())
      sparsities.push_back(r.target_sparsity);
  }
  std::sort(sparsities.begin(), sparsities.end());

  std::map<std::pair<std::string, double>, CellStats> cells;
  for (const auto& r : results) {
    CellStats& c = cells[{r.method, r.target_sparsity}];
    if (!r.error.empty()) {
      c.any_error = true;
      continue;
    }
    c.accs.push_back(r.test_accuracy);
    c.any_collapse |= r.collapsed();
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  // per-column best mean among the early methods (imp is the reference)
  std::map<double, std::string> column_best;
  for (double k : sparsities) {
    double best = -1.0;
    for (const auto& m : methods) {
      if (m == "imp") continue;
      auto it = cells.find({m, k});
      if (it == cells.end() || it->second.accs.empty()) continue;
      const double mean = mean_of(it->second.accs);
      if (mean > best) {
        best = mean;
        column_best[k] = m;
      }
    }
  }

  std::ostringstream os;
  os << "test accuracy (%), mean +/- std over seeds; * marks the best early "
        "method per column\n\n";
  os << "method    ";
  for (double k : sparsities) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "| sparsity %.4g%% ", k * 100.0);
    os << buf;
  }
  os << "\n";
  for (const auto& m : methods) {
    char name[32];
    std::snprintf(name, sizeof(name), "%-10s", m.c_str());
    os << name;
    for (double k : sparsities) {
      auto it = cells.find({m, k});
      std::string cell;
      if (it == cells.end()) {
        cell = "-";
      } else if (it->second.accs.empty()) {
        cell = "error";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s%.2f +/-%.2f%s",
                      column_best.count(k) && column_best[k] == m ? "*" : "",
                      mean_of(it->second.accs) * 100.0,
                      std_of(it->second.accs) * 100.0,
                      it->second.any_collapse ? " [collapse]" : "");
        cell = buf;
        if (it->second.any_error) cell += " [error]";
      }
      char padded[64];
      std::snprintf(padded, sizeof(padded), "| %-15s ", cell.c_str());
      os << padded;
    }
    os << "\n";
  }
  return os.str();
}

void report(const std::vector<RunResult>& results, const std::string& out_path) {
  const std::string text = format_report(results);
  std::ofstream f(out_path);
  if (!f) throw IoError("cannot open " + out_path + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + out_path);
}

}  // namespace prunelab
