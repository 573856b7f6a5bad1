#pragma once

#include <string>
#include <vector>

#include "prunelab/optim.hpp"

namespace prunelab {

enum class PruneMethod { magnitude, snip, synflow, drive };

std::string to_string(PruneMethod method);
PruneMethod parse_method(const std::string& name);

// Per-element saliency for every prunable parameter. Normalized vectors sum
// to 1 over all prunable elements; positions that are already pruned carry
// score 0 and never participate in ranking.
struct ScoreVector {
  std::map<std::string, Tensor> scores;
  bool normalized = false;
  PruneMethod method = PruneMethod::magnitude;

  double total() const;
};

// Densities d_n = (1-κ)^(n/N), n = 1..N: equal geometric steps from dense to
// the final density 1-κ, so sparsity rises monotonically to κ.
struct SparsitySchedule {
  double kappa = 0.0;
  int n_iters = 1;
  std::vector<double> densities;
};

SparsitySchedule make_schedule(double kappa, int n_iters);

struct PruneReport {
  double achieved_sparsity = 0.0;
  std::vector<std::pair<std::string, double>> layer_density;
  std::vector<int> collapsed_layers;
  std::vector<double> density_trace;  // achieved density after each iteration
  double prune_seconds = 0.0;
};

// |θ| at surviving positions, unnormalized.
ScoreVector score_magnitude(const Model& model);

// z_j = |∂L/∂m_j| / Σ|∂L/∂m_k| from the mask-gradient identity; one
// forward-backward pass on the batch.
ScoreVector score_snip(const Model& model, const Batch& batch,
                       const LossFn& loss = default_loss());

// Data-free synaptic saliency: forward an all-ones input through the masked
// network with |θ| in place of θ, sum the outputs to A, and score
// z = (∂A/∂|θ|) ⊙ |θ|. θ itself is never modified.
ScoreVector score_synflow(const Model& model);

// |∂L/∂θ_j| = |m_j · g_j|, unnormalized; a proxy for how far each parameter
// is from convergence.
ScoreVector convergence_sensitivity(const Model& model, const Batch& batch,
                                    const LossFn& loss = default_loss());

// Dual-gradient metric S_j = θ_j · (∂L/∂m_j) · (∂L/∂θ_j), normalized by
// magnitude. With a binary mask this reduces to S = m ⊙ (θ⊙g)².
ScoreVector score_drive(const Model& model, const Batch& batch,
                        const LossFn& loss = default_loss());

// Exact loss change from zeroing one element, via two forward passes. The
// brute-force oracle for the gradient-based sensitivity approximations.
double connection_sensitivity_exact(Model& model, const Batch& batch,
                                    const std::string& param_id, int64_t index,
                                    const LossFn& loss = default_loss());

// Globally ranks surviving elements and zeroes the masks of the lowest
// scored until round(target_density · prunable) survive. Ties break by
// (parameter id, element index) ascending. Newly pruned positions also clear
// their optimizer buffers when `state` is given.
PruneReport apply_prune(Model& model, const ScoreVector& scores,
                        double target_density,
                        OptimizerState* state = nullptr);

// Indices of layers whose prunable weight mask is entirely zero.
std::vector<int> detect_layer_collapse(const Model& model);

// Score-and-prune loop over the schedule. Each iteration samples one batch
// from the seeded stream (SynFlow and magnitude ignore it). Collapse is
// recorded in the report, never raised.
PruneReport iterative_prune(Model& model, PruneMethod method,
                            const SparsitySchedule& schedule,
                            const Dataset* data, int64_t batch_size,
                            uint64_t score_seed,
                            OptimizerState* state = nullptr);

struct DriveResult {
  PruneReport report;
  OptimizerState optimizer;    // live state after pretraining, for reuse
  double pretrain_seconds = 0.0;
};

// Trains the dense model for `pretrain_epochs`, then iteratively prunes with
// the dual-gradient metric. The trained weights are kept (no rewind), and
// prune_seconds covers the iterative stage only; pretraining is training
// time, charged against the epoch budget.
DriveResult drive_pipeline(Model& model, const Dataset& data,
                           int pretrain_epochs,
                           const SparsitySchedule& schedule,
                           const OptimizerSpec& optimizer, int64_t batch_size,
                           uint64_t seed);

// Train-prune-rewind cycles: magnitude scores after each cycle's training,
// then surviving weights reset to their initial values bit-for-bit. Cycle
// training counts toward prune_seconds, since it exists only to rank
// parameters. The optimizer and its schedule restart every cycle.
PruneReport imp_pipeline(Model& model, const Dataset& data, int cycles,
                         int epochs_per_cycle, double kappa,
                         const OptimizerSpec& optimizer, int64_t batch_size,
                         uint64_t seed);

// One-shot prune at initialization from a single scored batch.
PruneReport snip_pipeline(Model& model, const Dataset& data, double kappa,
                          int64_t batch_size, uint64_t seed);

// Data-free iterative prune; consumes no dataset.
PruneReport synflow_pipeline(Model& model, double kappa, int n_iters = 100);

}  // namespace prunelab
