#include "prunelab/optim.hpp"

#include <chrono>
#include <cmath>

namespace prunelab {

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw EpochOutOfRange("epoch must be non-negative");
  if (const auto* c = std::get_if<ConstantLr>(&schedule)) return c->eta0;
  if (const auto* s = std::get_if<StepDecayLr>(&schedule)) {
    double eta = s->eta0;
    for (int m : s->milestones)
      if (epoch >= m) eta /= s->factor;
    return eta;
  }
  const auto& c = std::get<CosineLr>(schedule);
  if (epoch >= c.total_epochs)
    throw EpochOutOfRange("epoch " + std::to_string(epoch) +
                          " outside cosine horizon " +
                          std::to_string(c.total_epochs));
  return c.eta0 * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * epoch / c.total_epochs));
}

OptimizerState OptimizerState::sgd(double lr, double momentum) {
  OptimizerState s;
  s.method_ = OptimMethod::sgd;
  s.learning_rate = lr;
  s.momentum = momentum;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2,
                                    double epsilon) {
  OptimizerState s;
  s.method_ = OptimMethod::adam;
  s.learning_rate = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

OptimizerState OptimizerState::from_spec(const OptimizerSpec& spec) {
  const double lr0 = lr_at_epoch(spec.schedule, 0);
  return spec.method == OptimMethod::sgd
             ? sgd(lr0, spec.momentum)
             : adam(lr0, spec.beta1, spec.beta2, spec.epsilon);
}

Tensor& OptimizerState::buffer(std::map<std::string, Tensor>& store,
                               const Parameter& p) {
  auto it = store.find(p.id);
  if (it == store.end()) it = store.emplace(p.id, Tensor(p.value.shape())).first;
  return it->second;
}

void OptimizerState::zero_where_masked(const Parameter& param) {
  for (auto* store : {&velocity_, &m1_, &m2_}) {
    auto it = store->find(param.id);
    if (it == store->end()) continue;
    for (int64_t i = 0; i < param.mask.size(); ++i)
      if (param.mask[i] == 0.0f) it->second[i] = 0.0f;
  }
}

namespace {
const Tensor& grad_for(const GradientMap& grads, const Parameter& p) {
  auto it = grads.find(p.id);
  if (it == grads.end())
    throw MissingParameter("optimizer step: no gradient for " + p.id);
  return it->second;
}
}  // namespace

void sgd_step(Model& model, const GradientMap& grads, OptimizerState& state) {
  const float eta = static_cast<float>(state.learning_rate);
  const float mu = static_cast<float>(state.momentum);
  for (auto& p : model.params()) {
    const Tensor& g = grad_for(grads, p);
    Tensor& v = state.buffer(state.velocity_, p);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      p.value[i] -= eta * v[i] * p.mask[i];
    }
  }
}

void adam_step(Model& model, const GradientMap& grads, OptimizerState& state,
               int64_t t) {
  if (t < 1) throw InvalidArg("adam_step: t must be at least 1");
  const double eta = state.learning_rate;
  const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (auto& p : model.params()) {
    const Tensor& g = grad_for(grads, p);
    Tensor& m = state.buffer(state.m1_, p);
    Tensor& v = state.buffer(state.m2_, p);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= static_cast<float>(eta * mhat / (std::sqrt(vhat) + eps) *
                                       p.mask[i]);
    }
  }
}

void optimizer_step(Model& model, const GradientMap& grads,
                    OptimizerState& state) {
  ++state.step_count;
  if (state.method() == OptimMethod::sgd)
    sgd_step(model, grads, state);
  else
    adam_step(model, grads, state, state.step_count);
}

double train_epochs(Model& model, const Dataset& data, int epochs,
                    int epoch_offset, OptimizerState& state,
                    const LrSchedule& schedule, int64_t batch_size,
                    uint64_t shuffle_seed) {
  const auto t0 = std::chrono::steady_clock::now();
  BatchIterator it(data, batch_size, shuffle_seed);
  for (int skip = 0; skip < epoch_offset; ++skip) it.next_epoch();
  for (int e = 0; e < epochs; ++e) {
    state.learning_rate = lr_at_epoch(schedule, epoch_offset + e);
    while (auto batch = it.next()) {
      GradientMap grads = model_grads(model, *batch);
      optimizer_step(model, grads, state);
    }
    it.next_epoch();
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace prunelab
