#pragma once

#include <map>
#include <variant>

#include "prunelab/nn.hpp"

namespace prunelab {

struct ConstantLr {
  double eta0 = 0.1;
};
struct StepDecayLr {
  double eta0 = 0.1;
  double factor = 10.0;
  std::vector<int> milestones;  // epochs at which eta is divided by factor
};
struct CosineLr {
  double eta0 = 0.1;
  int total_epochs = 1;
};
using LrSchedule = std::variant<ConstantLr, StepDecayLr, CosineLr>;

double lr_at_epoch(const LrSchedule& schedule, int epoch);

enum class OptimMethod { sgd, adam };

// Hyperparameters only; buffers live in OptimizerState.
struct OptimizerSpec {
  OptimMethod method = OptimMethod::sgd;
  double momentum = 0.0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  LrSchedule schedule = ConstantLr{0.1};
};

class OptimizerState {
 public:
  static OptimizerState sgd(double lr, double momentum = 0.0);
  static OptimizerState adam(double lr, double beta1 = 0.9,
                             double beta2 = 0.999, double epsilon = 1e-8);
  static OptimizerState from_spec(const OptimizerSpec& spec);

  OptimMethod method() const { return method_; }
  double learning_rate = 0.1;
  double momentum = 0.0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int64_t step_count = 0;  // t for Adam bias correction

  std::map<std::string, Tensor>& velocity() { return velocity_; }
  std::map<std::string, Tensor>& first_moment() { return m1_; }
  std::map<std::string, Tensor>& second_moment() { return m2_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  const std::map<std::string, Tensor>& first_moment() const { return m1_; }
  const std::map<std::string, Tensor>& second_moment() const { return m2_; }

  // Clears momentum/Adam buffers at positions where the mask is now 0
  // (called when a parameter is pruned).
  void zero_where_masked(const Parameter& param);

 private:
  Tensor& buffer(std::map<std::string, Tensor>& store, const Parameter& p);

  OptimMethod method_ = OptimMethod::sgd;
  std::map<std::string, Tensor> velocity_, m1_, m2_;

  friend void sgd_step(Model&, const GradientMap&, OptimizerState&);
  friend void adam_step(Model&, const GradientMap&, OptimizerState&, int64_t);
};

// θ ← θ − η·v with v ← momentum·v + g; the update is gated by the mask, so
// pruned positions keep their exact pre-pruning values.
void sgd_step(Model& model, const GradientMap& grads, OptimizerState& state);

// Standard bias-corrected Adam, masked the same way. t is 1-based.
void adam_step(Model& model, const GradientMap& grads, OptimizerState& state,
               int64_t t);

// Dispatches on the state's method and maintains the step counter.
void optimizer_step(Model& model, const GradientMap& grads,
                    OptimizerState& state);

// One pass over the dataset per epoch with seeded shuffling; the learning
// rate follows `schedule` at epoch_offset + e. Returns seconds spent.
double train_epochs(Model& model, const Dataset& data, int epochs,
                    int epoch_offset, OptimizerState& state,
                    const LrSchedule& schedule, int64_t batch_size,
                    uint64_t shuffle_seed);

}  // namespace prunelab
