#include "prunelab/prune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "prunelab/rng.hpp"

namespace prunelab {

namespace {
using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}
}  // namespace

std::string to_string(PruneMethod method) {
  switch (method) {
    case PruneMethod::magnitude: return "magnitude";
    case PruneMethod::snip: return "snip";
    case PruneMethod::synflow: return "synflow";
    case PruneMethod::drive: return "drive";
  }
  return "?";
}

PruneMethod parse_method(const std::string& name) {
  if (name == "magnitude") return PruneMethod::magnitude;
  if (name == "snip") return PruneMethod::snip;
  if (name == "synflow") return PruneMethod::synflow;
  if (name == "drive") return PruneMethod::drive;
  throw InvalidValue("unknown pruning method: " + name);
}

double ScoreVector::total() const {
  double t = 0.0;
  for (const auto& [id, z] : scores)
    for (int64_t i = 0; i < z.size(); ++i) t += z[i];
  return t;
}

SparsitySchedule make_schedule(double kappa, int n_iters) {
  if (!(kappa >= 0.0 && kappa < 1.0))
    throw InvalidSparsity("sparsity must lie in [0,1), got " +
                          std::to_string(kappa));
  if (n_iters < 1) throw InvalidArg("schedule needs at least one iteration");
  SparsitySchedule s;
  s.kappa = kappa;
  s.n_iters = n_iters;
  s.densities.reserve(static_cast<size_t>(n_iters));
  for (int n = 1; n <= n_iters; ++n)
    s.densities.push_back(
        std::pow(1.0 - kappa, static_cast<double>(n) / n_iters));
  return s;
}

namespace {

// Zeroes entries whose mask is 0 and normalizes the rest to sum to 1.
void normalize_scores(const Model& model, ScoreVector& sv) {
  double total = 0.0;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    Tensor& z = sv.scores.at(p.id);
    for (int64_t i = 0; i < z.size(); ++i) {
      if (p.mask[i] == 0.0f) z[i] = 0.0f;
      total += std::abs(static_cast<double>(z[i]));
    }
  }
  if (total == 0.0)
    throw ZeroSaliency("all saliencies are zero, normalization undefined");
  for (auto& [id, z] : sv.scores)
    for (int64_t i = 0; i < z.size(); ++i)
      z[i] = static_cast<float>(std::abs(static_cast<double>(z[i])) / total);
  sv.normalized = true;
}

}  // namespace

ScoreVector score_magnitude(const Model& model) {
  ScoreVector sv;
  sv.method = PruneMethod::magnitude;
  for (const auto& p : model.params())
    if (p.prunable) sv.scores.emplace(p.id, absval(p.value));
  return sv;
}

ScoreVector score_snip(const Model& model, const Batch& batch,
                       const LossFn& loss) {
  GradientMap grads = model_grads(model, batch, loss);
  GradientMap mg = mask_gradient(model, grads);
  ScoreVector sv;
  sv.method = PruneMethod::snip;
  for (auto& [id, g] : mg) sv.scores.emplace(id, std::move(g));
  normalize_scores(model, sv);
  return sv;
}

ScoreVector score_synflow(const Model& model) {
  // Work on a copy with |θ|; the caller's parameters are untouched, which
  // makes the restore-exactly contract trivial.
  Model probe = model;
  for (auto& p : probe.params()) p.value = absval(p.value);

  Shape in = probe.spec().input_shape;
  in.insert(in.begin(), 1);
  Tape tape;
  Var out = probe.forward(tape, Tensor::full(in, 1.0f));
  Var a = sum(out);
  if (!a.value().all_finite())
    throw NonFinite("synflow: network output sum overflowed");
  GradientMap grads = tape.backward(a);

  ScoreVector sv;
  sv.method = PruneMethod::synflow;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    const Tensor& g = grads.at(p.id);  // ∂A/∂w at w = |θ|⊙m
    Tensor z(p.value.shape());
    for (int64_t i = 0; i < z.size(); ++i)
      z[i] = std::abs(p.value[i]) * g[i] * p.mask[i];
    sv.scores.emplace(p.id, std::move(z));
  }
  return sv;
}

ScoreVector convergence_sensitivity(const Model& model, const Batch& batch,
                                    const LossFn& loss) {
  GradientMap grads = model_grads(model, batch, loss);
  ScoreVector sv;
  sv.method = PruneMethod::drive;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    const Tensor& g = grads.at(p.id);
    Tensor z(p.value.shape());
    for (int64_t i = 0; i < z.size(); ++i)
      z[i] = std::abs(p.mask[i] * g[i]);
    sv.scores.emplace(p.id, std::move(z));
  }
  return sv;
}

ScoreVector score_drive(const Model& model, const Batch& batch,
                        const LossFn& loss) {
  GradientMap grads = model_grads(model, batch, loss);
  ScoreVector sv;
  sv.method = PruneMethod::drive;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    const Tensor& g = grads.at(p.id);
    Tensor s(p.value.shape());
    for (int64_t i = 0; i < s.size(); ++i) {
      // θ_j · (∂L/∂m_j) · (∂L/∂θ_j) = θ_j · (θ_j g_j) · (m_j g_j)
      const double mask_grad = static_cast<double>(p.value[i]) * g[i];
      const double theta_grad = static_cast<double>(p.mask[i]) * g[i];
      s[i] = static_cast<float>(static_cast<double>(p.value[i]) * mask_grad *
                                theta_grad);
    }
    sv.scores.emplace(p.id, std::move(s));
  }
  normalize_scores(model, sv);
  return sv;
}

double connection_sensitivity_exact(Model& model, const Batch& batch,
                                    const std::string& param_id, int64_t index,
                                    const LossFn& loss) {
  Parameter& p = model.param(param_id);
  if (index < 0 || index >= p.mask.size())
    throw InvalidArg("connection_sensitivity_exact: index out of range");
  if (p.mask[index] == 0.0f)
    throw AlreadyPruned(param_id + "[" + std::to_string(index) +
                        "] is already pruned");
  auto eval = [&]() {
    Tape tape;
    Var logits = model.forward(tape, batch.x);
    return static_cast<double>(loss(tape, logits, batch).value()[0]);
  };
  const double with_j = eval();
  p.mask[index] = 0.0f;
  const double without_j = eval();
  p.mask[index] = 1.0f;
  return with_j - without_j;
}

namespace {

struct RankEntry {
  float score;
  int32_t param;  // ordinal among prunable params sorted by id
  int64_t index;
};

// Ascending (score, parameter id, element index): the global pruning order.
bool rank_less(const RankEntry& a, const RankEntry& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.param != b.param) return a.param < b.param;
  return a.index < b.index;
}

std::vector<Parameter*> prunable_by_id(Model& model) {
  std::vector<Parameter*> out;
  for (auto& p : model.params())
    if (p.prunable) out.push_back(&p);
  std::sort(out.begin(), out.end(),
            [](const Parameter* a, const Parameter* b) { return a->id < b->id; });
  return out;
}

void fill_report_layers(const Model& model, PruneReport& report) {
  report.layer_density.clear();
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    int64_t alive = 0;
    for (int64_t i = 0; i < p.mask.size(); ++i)
      if (p.mask[i] != 0.0f) ++alive;
    report.layer_density.emplace_back(
        p.id, static_cast<double>(alive) / static_cast<double>(p.mask.size()));
  }
  report.collapsed_layers = detect_layer_collapse(model);
}

}  // namespace

PruneReport apply_prune(Model& model, const ScoreVector& scores,
                        double target_density, OptimizerState* state) {
  const auto t0 = Clock::now();
  std::vector<Parameter*> prunable = prunable_by_id(model);
  for (const Parameter* p : prunable)
    if (!scores.scores.count(p->id))
      throw MissingParameter("apply_prune: no scores for " + p->id);

  const int64_t total = model.prunable_count();
  const int64_t survivors = model.survivor_count();
  const int64_t target = std::lround(target_density * static_cast<double>(total));
  if (target > survivors)
    throw DensityIncrease("target density " + std::to_string(target_density) +
                          " exceeds current density " +
                          std::to_string(model.density()));

  const int64_t n_prune = survivors - target;
  if (n_prune > 0) {
    std::vector<RankEntry> entries;
    entries.reserve(static_cast<size_t>(survivors));
    for (size_t ord = 0; ord < prunable.size(); ++ord) {
      const Parameter& p = *prunable[ord];
      const Tensor& z = scores.scores.at(p.id);
      if (!z.same_shape(p.value))
        throw DimensionMismatch("apply_prune: score shape mismatch for " + p.id);
      for (int64_t i = 0; i < z.size(); ++i)
        if (p.mask[i] != 0.0f)
          entries.push_back({z[i], static_cast<int32_t>(ord), i});
    }
    std::nth_element(entries.begin(), entries.begin() + (n_prune - 1),
                     entries.end(), rank_less);
    for (int64_t k = 0; k < n_prune; ++k) {
      const RankEntry& e = entries[static_cast<size_t>(k)];
      prunable[static_cast<size_t>(e.param)]->mask[e.index] = 0.0f;
    }
    if (state)
      for (Parameter* p : prunable) state->zero_where_masked(*p);
  }

  PruneReport report;
  report.achieved_sparsity = model.sparsity();
  report.density_trace = {model.density()};
  fill_report_layers(model, report);
  report.prune_seconds = seconds_since(t0);
  return report;
}

std::vector<int> detect_layer_collapse(const Model& model) {
  std::vector<int> collapsed;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    bool all_zero = true;
    for (int64_t i = 0; i < p.mask.size() && all_zero; ++i)
      if (p.mask[i] != 0.0f) all_zero = false;
    if (all_zero) collapsed.push_back(p.layer_index);
  }
  std::sort(collapsed.begin(), collapsed.end());
  collapsed.erase(std::unique(collapsed.begin(), collapsed.end()),
                  collapsed.end());
  return collapsed;
}

PruneReport iterative_prune(Model& model, PruneMethod method,
                            const SparsitySchedule& schedule,
                            const Dataset* data, int64_t batch_size,
                            uint64_t score_seed, OptimizerState* state) {
  const bool needs_data =
      method == PruneMethod::snip || method == PruneMethod::drive;
  if (needs_data && data == nullptr)
    throw InvalidArg("iterative_prune: " + to_string(method) +
                     " requires a dataset");

  const auto t0 = Clock::now();
  std::optional<BatchIterator> it;
  if (data) it.emplace(*data, batch_size, substream_seed(score_seed, "score"));
  auto sample = [&]() -> Batch {
    auto b = it->next();
    if (!b) {
      it->next_epoch();
      b = it->next();
    }
    return std::move(*b);
  };

  PruneReport report;
  for (double density : schedule.densities) {
    ScoreVector scores;
    switch (method) {
      case PruneMethod::magnitude:
        scores = score_magnitude(model);
        break;
      case PruneMethod::snip:
        scores = score_snip(model, sample());
        break;
      case PruneMethod::synflow:
        scores = score_synflow(model);
        break;
      case PruneMethod::drive:
        scores = score_drive(model, sample());
        break;
    }
    apply_prune(model, scores, density, state);
    report.density_trace.push_back(model.density());
  }
  report.achieved_sparsity = model.sparsity();
  fill_report_layers(model, report);
  report.prune_seconds = seconds_since(t0);
  return report;
}

DriveResult drive_pipeline(Model& model, const Dataset& data,
                           int pretrain_epochs,
                           const SparsitySchedule& schedule,
                           const OptimizerSpec& optimizer, int64_t batch_size,
                           uint64_t seed) {
  if (pretrain_epochs < 0)
    throw InvalidArg("drive_pipeline: negative pretraining epochs");
  DriveResult result{.report = {},
                     .optimizer = OptimizerState::from_spec(optimizer),
                     .pretrain_seconds = 0.0};
  result.pretrain_seconds = train_epochs(
      model, data, pretrain_epochs, 0, result.optimizer, optimizer.schedule,
      batch_size, substream_seed(seed, "shuffle"));
  result.report =
      iterative_prune(model, PruneMethod::drive, schedule, &data, batch_size,
                      substream_seed(seed, "drive-score"), &result.optimizer);
  return result;
}

PruneReport imp_pipeline(Model& model, const Dataset& data, int cycles,
                         int epochs_per_cycle, double kappa,
                         const OptimizerSpec& optimizer, int64_t batch_size,
                         uint64_t seed) {
  if (cycles < 1) throw InvalidArg("imp_pipeline: need at least one cycle");
  const auto t0 = Clock::now();
  const SparsitySchedule schedule = make_schedule(kappa, cycles);

  std::vector<Tensor> initial;
  initial.reserve(model.params().size());
  for (const auto& p : model.params()) initial.push_back(p.value);

  PruneReport report;
  for (int n = 0; n < cycles; ++n) {
    OptimizerState state = OptimizerState::from_spec(optimizer);
    train_epochs(model, data, epochs_per_cycle, 0, state, optimizer.schedule,
                 batch_size,
                 substream_seed(seed, "cycle" + std::to_string(n)));
    apply_prune(model, score_magnitude(model),
                schedule.densities[static_cast<size_t>(n)], &state);
    // rewind: survivors return to their initial values bit for bit
    for (size_t i = 0; i < model.params().size(); ++i)
      model.params()[i].value = initial[i];
    report.density_trace.push_back(model.density());
  }
  report.achieved_sparsity = model.sparsity();
  fill_report_layers(model, report);
  report.prune_seconds = seconds_since(t0);
  return report;
}

PruneReport snip_pipeline(Model& model, const Dataset& data, double kappa,
                          int64_t batch_size, uint64_t seed) {
  const SparsitySchedule schedule = make_schedule(kappa, 1);
  return iterative_prune(model, PruneMethod::snip, schedule, &data, batch_size,
                         seed);
}

PruneReport synflow_pipeline(Model& model, double kappa, int n_iters) {
  return iterative_prune(model, PruneMethod::synflow,
                         make_schedule(kappa, n_iters), nullptr, 1, 0);
}

}  // namespace prunelab
