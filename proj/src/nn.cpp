#include "prunelab/nn.hpp"

#include <algorithm>
#include <cmath>

#include "prunelab/rng.hpp"

namespace prunelab {

std::vector<Shape> ModelSpec::layer_output_shapes() const {
  if (layers.empty()) throw InvalidSpec("model has no layers");
  if (input_shape.empty()) throw InvalidSpec("model input shape is empty");
  if (num_classes < 1) throw InvalidSpec("model needs a positive class count");

  std::vector<Shape> out;
  Shape cur = input_shape;
  for (size_t li = 0; li < layers.size(); ++li) {
    const std::string where = "layer " + std::to_string(li);
    if (auto* d = std::get_if<DenseSpec>(&layers[li])) {
      if (d->in < 1 || d->out < 1)
        throw InvalidSpec(where + ": dense sizes must be positive");
      if (cur.size() != 1 || cur[0] != d->in)
        throw InvalidSpec(where + ": dense expects [" + std::to_string(d->in) +
                          "], previous layer yields " + shape_str(cur));
      cur = {d->out};
    } else if (auto* c = std::get_if<Conv2DSpec>(&layers[li])) {
      if (cur.size() != 3 || cur[0] != c->in_ch)
        throw InvalidSpec(where + ": conv expects " +
                          std::to_string(c->in_ch) + " channels, previous " +
                          "layer yields " + shape_str(cur));
      const int64_t h = cur[1] + 2 * c->padding - c->kernel;
      const int64_t w = cur[2] + 2 * c->padding - c->kernel;
      if (c->kernel < 1 || h < 0 || w < 0)
        throw InvalidSpec(where + ": kernel does not fit the input plane");
      cur = {c->out_ch, h / c->stride + 1, w / c->stride + 1};
    } else if (auto* p = std::get_if<MaxPoolSpec>(&layers[li])) {
      if (cur.size() != 3 || cur[1] < p->size || cur[2] < p->size)
        throw InvalidSpec(where + ": pooling window does not fit " +
                          shape_str(cur));
      cur = {cur[0], (cur[1] - p->size) / p->stride + 1,
             (cur[2] - p->size) / p->stride + 1};
    } else {
      cur = {shape_numel(cur)};
    }
    out.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != num_classes)
    throw InvalidSpec("final layer yields " + shape_str(cur) + ", expected [" +
                      std::to_string(num_classes) + "]");
  return out;
}

Model::Model(ModelSpec spec, uint64_t seed)
    : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  Rng rng(substream_seed(seed, "init"));
  auto kaiming = [&](Tensor& t, int64_t fan_in) {
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  };
  for (size_t li = 0; li < spec_.layers.size(); ++li) {
    const std::string prefix = "layer" + std::to_string(li);
    if (auto* d = std::get_if<DenseSpec>(&spec_.layers[li])) {
      Parameter w;
      w.id = prefix + ".weight";
      w.role = ParamRole::weight;
      w.value = Tensor({d->in, d->out});
      kaiming(w.value, d->in);
      w.mask = Tensor::full(w.value.shape(), 1.0f);
      w.prunable = true;
      w.layer_index = static_cast<int>(li);
      params_.push_back(std::move(w));
      if (d->bias) {
        Parameter b;
        b.id = prefix + ".bias";
        b.role = ParamRole::bias;
        b.value = Tensor({d->out});
        b.mask = Tensor::full(b.value.shape(), 1.0f);
        b.prunable = false;
        b.layer_index = static_cast<int>(li);
        params_.push_back(std::move(b));
      }
    } else if (auto* c = std::get_if<Conv2DSpec>(&spec_.layers[li])) {
      Parameter w;
      w.id = prefix + ".weight";
      w.role = ParamRole::weight;
      w.value = Tensor({c->out_ch, c->in_ch, c->kernel, c->kernel});
      kaiming(w.value, c->in_ch * c->kernel * c->kernel);
      w.mask = Tensor::full(w.value.shape(), 1.0f);
      w.prunable = true;
      w.layer_index = static_cast<int>(li);
      params_.push_back(std::move(w));
      if (c->bias) {
        Parameter b;
        b.id = prefix + ".bias";
        b.role = ParamRole::bias;
        b.value = Tensor({c->out_ch});
        b.mask = Tensor::full(b.value.shape(), 1.0f);
        b.prunable = false;
        b.layer_index = static_cast<int>(li);
        params_.push_back(std::move(b));
      }
    }
  }
}

Parameter& Model::param(const std::string& id) {
  for (auto& p : params_)
    if (p.id == id) return p;
  throw MissingParameter("no parameter named " + id);
}

const Parameter& Model::param(const std::string& id) const {
  return const_cast<Model*>(this)->param(id);
}

Var Model::forward(Tape& tape, const Tensor& x) const {
  const Shape& in = spec_.input_shape;
  if (x.rank() != in.size() + 1 ||
      !std::equal(in.begin(), in.end(), x.shape().begin() + 1))
    throw DimensionMismatch("input batch " + shape_str(x.shape()) +
                            " does not match model input " + shape_str(in));

  size_t pi = 0;
  auto next_param = [&](const std::string& id) -> const Parameter& {
    while (pi < params_.size() && params_[pi].id != id) ++pi;
    if (pi == params_.size()) throw MissingParameter("forward: " + id);
    return params_[pi];
  };

  Var h = tape.leaf(x);
  for (size_t li = 0; li < spec_.layers.size(); ++li) {
    const std::string prefix = "layer" + std::to_string(li);
    if (auto* d = std::get_if<DenseSpec>(&spec_.layers[li])) {
      const Parameter& w = next_param(prefix + ".weight");
      Var wv = tape.param(w.id, w.effective());
      h = matmul(h, wv);
      if (d->bias) {
        const Parameter& b = next_param(prefix + ".bias");
        h = add_rowvec(h, tape.param(b.id, b.effective()));
      }
      if (d->act == Activation::relu) h = relu(h);
    } else if (auto* c = std::get_if<Conv2DSpec>(&spec_.layers[li])) {
      const Parameter& w = next_param(prefix + ".weight");
      Var wv = tape.param(w.id, w.effective());
      h = conv2d(h, wv, c->stride, c->padding);
      if (c->bias) {
        const Parameter& b = next_param(prefix + ".bias");
        h = add_chan(h, tape.param(b.id, b.effective()));
      }
      if (c->act == Activation::relu) h = relu(h);
    } else if (auto* p = std::get_if<MaxPoolSpec>(&spec_.layers[li])) {
      h = maxpool2d(h, p->size, p->stride);
    } else {
      h = flatten(h);
    }
  }
  return h;
}

int64_t Model::prunable_count() const {
  int64_t n = 0;
  for (const auto& p : params_)
    if (p.prunable) n += p.value.size();
  return n;
}

int64_t Model::survivor_count() const {
  int64_t n = 0;
  for (const auto& p : params_)
    if (p.prunable)
      for (int64_t i = 0; i < p.mask.size(); ++i)
        if (p.mask[i] != 0.0f) ++n;
  return n;
}

double Model::density() const {
  const int64_t total = prunable_count();
  return total == 0 ? 1.0
                    : static_cast<double>(survivor_count()) /
                          static_cast<double>(total);
}

Model build_model(const ModelSpec& spec, uint64_t seed) {
  return Model(spec, seed);
}

Tensor forward_logits(const Model& model, const Tensor& x) {
  Tape tape;
  return model.forward(tape, x).value();
}

Var loss_ce(Tape& tape, Var logits, std::span<const int> labels) {
  (void)tape;
  return softmax_cross_entropy(logits, labels);
}

const LossFn& default_loss() {
  static const LossFn fn = [](Tape& tape, Var logits, const Batch& batch) {
    return loss_ce(tape, logits, batch.labels);
  };
  return fn;
}

GradientMap model_grads(const Model& model, const Batch& batch,
                        const LossFn& loss) {
  if (batch.labels.empty()) throw InvalidArg("model_grads: empty batch");
  Tape tape;
  Var logits = model.forward(tape, batch.x);
  Var l = loss(tape, logits, batch);
  return tape.backward(l);
}

GradientMap mask_gradient(const Model& model, const GradientMap& grads) {
  GradientMap out;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    auto it = grads.find(p.id);
    if (it == grads.end())
      throw MissingParameter("mask_gradient: no gradient for " + p.id);
    out.emplace(p.id, hadamard(p.value, it->second));
  }
  return out;
}

ModelSpec mlp_spec(const std::vector<int64_t>& widths, int num_classes,
                   bool bias, Shape input_shape) {
  if (widths.size() < 2)
    throw InvalidSpec("mlp_spec: need input and output widths");
  ModelSpec spec;
  spec.input_shape = input_shape.empty() ? Shape{widths.front()} : input_shape;
  spec.num_classes = num_classes;
  spec.layers.push_back(FlattenSpec{});
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    spec.layers.push_back(DenseSpec{widths[i], widths[i + 1],
                                    last ? Activation::none : Activation::relu,
                                    bias});
  }
  return spec;
}

ModelSpec desk_mlp_spec() { return mlp_spec({784, 300, 100, 10}, 10); }

ModelSpec small_conv_spec() {
  ModelSpec spec;
  spec.input_shape = {1, 28, 28};
  spec.num_classes = 10;
  spec.layers = {
      Conv2DSpec{1, 8, 3, 1, 1, Activation::relu, true},
      MaxPoolSpec{2, 2},
      Conv2DSpec{8, 16, 3, 1, 1, Activation::relu, true},
      MaxPoolSpec{2, 2},
      FlattenSpec{},
      DenseSpec{16 * 7 * 7, 10, Activation::none, true},
  };
  return spec;
}

}  // namespace prunelab
