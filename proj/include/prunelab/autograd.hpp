#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; the backing Tensor
// lives in the tape node.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// parameter id -> gradient tensor of the same shape
using GradientMap = std::map<std::string, Tensor>;

// Records primitive operations in execution order. Recording is eager: every
// op computes its float32 result immediately and pushes one node. backward()
// replays the nodes in reverse, accumulating adjoints in float64 partial sums
// and emitting float32 gradients for the gradient-requiring leaves.
//
// A tape is confined to a single execution context; concurrent computations
// need separate tapes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // constant leaf (no gradient)
  Var leaf(Tensor value);
  // gradient-requiring leaf; keys must be unique per tape
  Var param(const std::string& key, Tensor value);

  GradientMap backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf,
    kMatmul,
    kConv2d,
    kMaxPool2d,
    kRelu,
    kAdd,
    kAddRowVec,
    kAddChan,
    kMul,
    kScale,
    kSum,
    kFlatten,
    kSoftmaxCrossEntropy,
  };

  struct Node {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    Tensor value;
    // op-specific state
    bool requires_grad = false;
    std::string key;              // kLeaf params
    double factor = 0.0;          // kScale
    int stride = 1, padding = 0;  // kConv2d / kMaxPool2d
    int ksize = 0;                // kMaxPool2d
    std::vector<int32_t> argmax;  // kMaxPool2d
    std::vector<int> labels;      // kSoftmaxCrossEntropy
  };

  Var push(Node node);
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::map<std::string, int32_t> params_;

  friend struct Var;
  friend Var matmul(Var a, Var b);
  friend Var conv2d(Var input, Var kernels, int stride, int padding);
  friend Var maxpool2d(Var x, int size, int stride);
  friend Var relu(Var x);
  friend Var add(Var a, Var b);
  friend Var add_rowvec(Var m, Var v);
  friend Var add_chan(Var x, Var v);
  friend Var mul(Var a, Var b);
  friend Var scale(Var a, double s);
  friend Var sum(Var x);
  friend Var flatten(Var x);
  friend Var softmax_cross_entropy(Var logits, std::span<const int> labels);
};

Var matmul(Var a, Var b);
Var conv2d(Var input, Var kernels, int stride, int padding);
Var maxpool2d(Var x, int size, int stride);
Var relu(Var x);
Var add(Var a, Var b);
Var add_rowvec(Var m, Var v);
Var add_chan(Var x, Var v);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var x);
Var flatten(Var x);
// mean softmax cross-entropy over the batch; logits are [batch x classes]
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

inline GradientMap backward(Var loss) { return loss.tape->backward(loss); }

// Central-difference gradient of an arbitrary scalar function, the
// independent oracle for every reverse-mode claim in this project. The
// difference quotient is evaluated in float64 against the actually
// representable perturbed values, so float32 quantization of the probe
// points does not bias the estimate.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                            const Tensor& at, double eps);

}  // namespace prunelab
