#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "prunelab/autograd.hpp"
#include "prunelab/data.hpp"

namespace prunelab {

enum class Activation { none, relu };

struct DenseSpec {
  int64_t in = 0, out = 0;
  Activation act = Activation::none;
  bool bias = true;
};
struct Conv2DSpec {
  int64_t in_ch = 0, out_ch = 0, kernel = 0;
  int stride = 1, padding = 0;
  Activation act = Activation::none;
  bool bias = true;
};
struct MaxPoolSpec {
  int size = 2, stride = 2;
};
struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2DSpec, MaxPoolSpec, FlattenSpec>;

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per example, without the batch dimension
  int num_classes = 0;

  // Output shape after each layer for a single example; throws InvalidSpec
  // when adjacent layers do not compose or the head width is not num_classes.
  std::vector<Shape> layer_output_shapes() const;
  void validate() const { layer_output_shapes(); }
};

enum class ParamRole { weight, bias };

// A value tensor paired with a same-shape {0,1} mask. Forward passes only
// ever see value ⊙ mask. Biases carry an all-ones mask and are not prunable.
struct Parameter {
  std::string id;
  ParamRole role = ParamRole::weight;
  Tensor value;
  Tensor mask;
  bool prunable = false;
  int layer_index = -1;

  Tensor effective() const { return hadamard(value, mask); }
};

class Model {
 public:
  Model(ModelSpec spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& id);
  const Parameter& param(const std::string& id) const;

  // records the masked forward pass on `tape`; x is [batch x input_shape]
  Var forward(Tape& tape, const Tensor& x) const;

  int64_t prunable_count() const;   // elements in prunable tensors
  int64_t survivor_count() const;   // of those, ones with mask == 1
  double density() const;
  double sparsity() const { return 1.0 - density(); }

 private:
  ModelSpec spec_;
  uint64_t seed_;
  std::vector<Parameter> params_;
};

Model build_model(const ModelSpec& spec, uint64_t seed);

Tensor forward_logits(const Model& model, const Tensor& x);
Var loss_ce(Tape& tape, Var logits, std::span<const int> labels);

// Loss plugged into gradient computations; defaults to mean softmax
// cross-entropy on the batch labels.
using LossFn = std::function<Var(Tape&, Var logits, const Batch&)>;
const LossFn& default_loss();

// Gradients of the loss with respect to the *effective* weights w = θ⊙m
// (masked-out positions may carry nonzero gradient), keyed by parameter id.
GradientMap model_grads(const Model& model, const Batch& batch,
                        const LossFn& loss = default_loss());

// ∂L/∂m = θ ⊙ ∂L/∂w for every prunable parameter, by the chain rule through
// w = θ⊙m. Computed from the identity rather than by differentiating the
// mask on the tape.
GradientMap mask_gradient(const Model& model, const GradientMap& grads);

// Convenience spec builders used by tests, the config parser, and the CLI.
ModelSpec mlp_spec(const std::vector<int64_t>& widths, int num_classes,
                   bool bias = true, Shape input_shape = {});
ModelSpec desk_mlp_spec();        // 784-300-100-10, biases on
ModelSpec small_conv_spec();      // two conv blocks + dense head on 1x28x28

}  // namespace prunelab
