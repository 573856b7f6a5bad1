#include "prunelab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prunelab {

namespace {

using MapD = Eigen::Map<MatrixD>;
using MapCD = Eigen::Map<const MatrixD>;

void require_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid())
    throw InvalidArg(std::string(op) + ": unbound operand");
  if (a.tape != b.tape)
    throw InvalidArg(std::string(op) + ": operands recorded on different tapes");
}

struct ConvDims {
  int64_t n, c, h, w;       // input
  int64_t f, kh, kw;        // kernels
  int64_t ho, wo;           // output plane
  int stride, padding;
  int64_t rows() const { return n * ho * wo; }
  int64_t cols() const { return c * kh * kw; }
};

ConvDims conv_dims(const Shape& in, const Shape& k, int stride, int padding) {
  if (in.size() != 4)
    throw DimensionMismatch("conv2d: input must be NxCxHxW, got " +
                            shape_str(in));
  if (k.size() != 4)
    throw DimensionMismatch("conv2d: kernels must be FxCxKHxKW, got " +
                            shape_str(k));
  if (stride < 1) throw InvalidArg("conv2d: stride must be positive");
  if (padding < 0) throw InvalidArg("conv2d: padding must be non-negative");
  ConvDims d;
  d.n = in[0];
  d.c = in[1];
  d.h = in[2];
  d.w = in[3];
  d.f = k[0];
  d.kh = k[2];
  d.kw = k[3];
  d.stride = stride;
  d.padding = padding;
  if (k[1] != d.c)
    throw DimensionMismatch("conv2d: input has " + std::to_string(d.c) +
                            " channels but kernels expect " +
                            std::to_string(k[1]));
  if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding)
    throw DimensionMismatch("conv2d: kernel " + std::to_string(d.kh) + "x" +
                            std::to_string(d.kw) + " exceeds padded input " +
                            std::to_string(d.h + 2 * padding) + "x" +
                            std::to_string(d.w + 2 * padding));
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// Patches matrix: row (n, i, j), column (c, u, v). Out-of-bounds taps read 0.
template <typename Scalar>
void im2col(const float* in, const ConvDims& d, Scalar* out) {
  const int64_t cols = d.cols();
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t i = 0; i < d.ho; ++i) {
      for (int64_t j = 0; j < d.wo; ++j) {
        Scalar* row = out + ((n * d.ho + i) * d.wo + j) * cols;
        for (int64_t c = 0; c < d.c; ++c) {
          for (int64_t u = 0; u < d.kh; ++u) {
            const int64_t y = i * d.stride + u - d.padding;
            for (int64_t v = 0; v < d.kw; ++v) {
              const int64_t x = j * d.stride + v - d.padding;
              Scalar val = 0;
              if (y >= 0 && y < d.h && x >= 0 && x < d.w)
                val = static_cast<Scalar>(
                    in[((n * d.c + c) * d.h + y) * d.w + x]);
              row[(c * d.kh + u) * d.kw + v] = val;
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a patches-gradient matrix back onto the input layout.
void col2im_add(const double* cols_grad, const ConvDims& d, double* in_grad) {
  const int64_t cols = d.cols();
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t i = 0; i < d.ho; ++i) {
      for (int64_t j = 0; j < d.wo; ++j) {
        const double* row = cols_grad + ((n * d.ho + i) * d.wo + j) * cols;
        for (int64_t c = 0; c < d.c; ++c) {
          for (int64_t u = 0; u < d.kh; ++u) {
            const int64_t y = i * d.stride + u - d.padding;
            if (y < 0 || y >= d.h) continue;
            for (int64_t v = 0; v < d.kw; ++v) {
              const int64_t x = j * d.stride + v - d.padding;
              if (x < 0 || x >= d.w) continue;
              in_grad[((n * d.c + c) * d.h + y) * d.w + x] +=
                  row[(c * d.kh + u) * d.kw + v];
            }
          }
        }
      }
    }
  }
}

MatrixD cast_to_double(const Tensor& t, int64_t rows, int64_t cols) {
  return t.mat(rows, cols).cast<double>();
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw InvalidArg("Var::value: unbound handle");
  return static_cast<const Tape*>(tape)->nodes_[static_cast<size_t>(id)].value;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const std::string& key, Tensor value) {
  if (params_.count(key))
    throw InvalidArg("duplicate parameter key on tape: " + key);
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  n.key = key;
  Var v = push(std::move(n));
  params_[key] = v.id;
  return v;
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2)
    throw DimensionMismatch("matmul: operands must be rank-2, got " +
                            shape_str(av.shape()) + " and " +
                            shape_str(bv.shape()));
  if (av.dim(1) != bv.dim(0))
    throw DimensionMismatch("matmul: inner dimensions disagree, " +
                            shape_str(av.shape()) + " x " +
                            shape_str(bv.shape()));
  Tape::Node n;
  n.op = Tape::Op::kMatmul;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor({av.dim(0), bv.dim(1)});
  n.value.mat(av.dim(0), bv.dim(1)).noalias() =
      av.mat(av.dim(0), av.dim(1)) * bv.mat(bv.dim(0), bv.dim(1));
  return a.tape->push(std::move(n));
}

Var conv2d(Var input, Var kernels, int stride, int padding) {
  require_same_tape(input, kernels, "conv2d");
  const Tensor& in = input.value();
  const Tensor& k = kernels.value();
  const ConvDims d = conv_dims(in.shape(), k.shape(), stride, padding);

  std::vector<float> patches(static_cast<size_t>(d.rows() * d.cols()));
  im2col<float>(in.data(), d, patches.data());
  Eigen::Map<const MatrixF> p(patches.data(), d.rows(), d.cols());

  MatrixF tmp(d.rows(), d.f);  // row (n,i,j), column f
  tmp.noalias() = p * k.mat(d.f, d.cols()).transpose();

  Tape::Node n;
  n.op = Tape::Op::kConv2d;
  n.a = input.id;
  n.b = kernels.id;
  n.stride = stride;
  n.padding = padding;
  n.value = Tensor({d.n, d.f, d.ho, d.wo});
  float* out = n.value.data();
  const int64_t plane = d.ho * d.wo;
  for (int64_t nn = 0; nn < d.n; ++nn)
    for (int64_t f = 0; f < d.f; ++f)
      for (int64_t o = 0; o < plane; ++o)
        out[(nn * d.f + f) * plane + o] = tmp(nn * plane + o, f);
  return input.tape->push(std::move(n));
}

Var maxpool2d(Var x, int size, int stride) {
  if (!x.valid()) throw InvalidArg("maxpool2d: unbound operand");
  if (size < 1 || stride < 1)
    throw InvalidArg("maxpool2d: size and stride must be positive");
  const Tensor& in = x.value();
  if (in.rank() != 4)
    throw DimensionMismatch("maxpool2d: input must be NxCxHxW, got " +
                            shape_str(in.shape()));
  const int64_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (size > h || size > w)
    throw DimensionMismatch("maxpool2d: window exceeds input plane");
  const int64_t ho = (h - size) / stride + 1;
  const int64_t wo = (w - size) / stride + 1;

  Tape::Node node;
  node.op = Tape::Op::kMaxPool2d;
  node.a = x.id;
  node.ksize = size;
  node.stride = stride;
  node.value = Tensor({n, c, ho, wo});
  node.argmax.resize(static_cast<size_t>(n * c * ho * wo));
  const float* src = in.data();
  float* dst = node.value.data();
  int64_t out_idx = 0;
  for (int64_t nn = 0; nn < n; ++nn) {
    for (int64_t cc = 0; cc < c; ++cc) {
      const float* plane = src + (nn * c + cc) * h * w;
      for (int64_t i = 0; i < ho; ++i) {
        for (int64_t j = 0; j < wo; ++j, ++out_idx) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_at = 0;
          for (int64_t u = 0; u < size; ++u) {
            for (int64_t v = 0; v < size; ++v) {
              const int64_t at = (i * stride + u) * w + (j * stride + v);
              if (plane[at] > best) {  // ties keep the first (lowest) index
                best = plane[at];
                best_at = at;
              }
            }
          }
          dst[out_idx] = best;
          node.argmax[static_cast<size_t>(out_idx)] =
              static_cast<int32_t>((nn * c + cc) * h * w + best_at);
        }
      }
    }
  }
  return x.tape->push(std::move(node));
}

Var relu(Var x) {
  if (!x.valid()) throw InvalidArg("relu: unbound operand");
  Tape::Node n;
  n.op = Tape::Op::kRelu;
  n.a = x.id;
  n.value = Tensor(x.value().shape());
  n.value.array() = x.value().array().max(0.0f);
  return x.tape->push(std::move(n));
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  Tape::Node n;
  n.op = Tape::Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.value = prunelab::add(a.value(), b.value());
  return a.tape->push(std::move(n));
}

Var add_rowvec(Var m, Var v) {
  require_same_tape(m, v, "add_rowvec");
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || vv.dim(0) != mv.dim(1))
    throw DimensionMismatch("add_rowvec: cannot add " + shape_str(vv.shape()) +
                            " to rows of " + shape_str(mv.shape()));
  Tape::Node n;
  n.op = Tape::Op::kAddRowVec;
  n.a = m.id;
  n.b = v.id;
  n.value = Tensor(mv.shape());
  n.value.mat(mv.dim(0), mv.dim(1)) =
      mv.mat(mv.dim(0), mv.dim(1)).rowwise() +
      Eigen::Map<const Eigen::RowVectorXf>(vv.data(), vv.dim(0));
  return m.tape->push(std::move(n));
}

Var add_chan(Var x, Var v) {
  require_same_tape(x, v, "add_chan");
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  if (xv.rank() != 4 || vv.rank() != 1 || vv.dim(0) != xv.dim(1))
    throw DimensionMismatch("add_chan: cannot add " + shape_str(vv.shape()) +
                            " to channels of " + shape_str(xv.shape()));
  Tape::Node n;
  n.op = Tape::Op::kAddChan;
  n.a = x.id;
  n.b = v.id;
  n.value = Tensor(xv.shape());
  const int64_t nn = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const float* src = xv.data();
  float* dst = n.value.data();
  for (int64_t b = 0; b < nn; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const float bias = vv[ch];
      const int64_t base = (b * c + ch) * plane;
      for (int64_t o = 0; o < plane; ++o) dst[base + o] = src[base + o] + bias;
    }
  return x.tape->push(std::move(n));
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  Tape::Node n;
  n.op = Tape::Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.value = hadamard(a.value(), b.value());
  return a.tape->push(std::move(n));
}

Var scale(Var a, double s) {
  if (!a.valid()) throw InvalidArg("scale: unbound operand");
  Tape::Node n;
  n.op = Tape::Op::kScale;
  n.a = a.id;
  n.factor = s;
  n.value = prunelab::scale(a.value(), static_cast<float>(s));
  return a.tape->push(std::move(n));
}

Var sum(Var x) {
  if (!x.valid()) throw InvalidArg("sum: unbound operand");
  Tape::Node n;
  n.op = Tape::Op::kSum;
  n.a = x.id;
  double acc = 0.0;
  const Tensor& xv = x.value();
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  n.value = Tensor::scalar(static_cast<float>(acc));
  return x.tape->push(std::move(n));
}

Var flatten(Var x) {
  if (!x.valid()) throw InvalidArg("flatten: unbound operand");
  const Tensor& xv = x.value();
  if (xv.rank() < 2)
    throw DimensionMismatch("flatten: input must have a batch dimension");
  Tape::Node n;
  n.op = Tape::Op::kFlatten;
  n.a = x.id;
  n.value = Tensor({xv.dim(0), xv.size() / xv.dim(0)},
                   std::vector<float>(xv.data(), xv.data() + xv.size()));
  return x.tape->push(std::move(n));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  if (!logits.valid()) throw InvalidArg("softmax_cross_entropy: unbound operand");
  const Tensor& lv = logits.value();
  if (lv.rank() != 2)
    throw DimensionMismatch("softmax_cross_entropy: logits must be 2-D, got " +
                            shape_str(lv.shape()));
  const int64_t batch = lv.dim(0), classes = lv.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch)
    throw DimensionMismatch("softmax_cross_entropy: " +
                            std::to_string(labels.size()) + " labels for " +
                            std::to_string(batch) + " rows");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw LabelOutOfRange("label " + std::to_string(y) +
                            " outside [0, " + std::to_string(classes) + ")");
  double total = 0.0;
  for (int64_t i = 0; i < batch; ++i) {
    const float* row = lv.data() + i * classes;
    double mx = row[0];
    for (int64_t k = 1; k < classes; ++k) mx = std::max<double>(mx, row[k]);
    double se = 0.0;
    for (int64_t k = 0; k < classes; ++k) se += std::exp(row[k] - mx);
    total += std::log(se) - (row[labels[static_cast<size_t>(i)]] - mx);
  }
  Tape::Node n;
  n.op = Tape::Op::kSoftmaxCrossEntropy;
  n.a = logits.id;
  n.labels.assign(labels.begin(), labels.end());
  n.value = Tensor::scalar(static_cast<float>(total / batch));
  return logits.tape->push(std::move(n));
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape != this || loss.id < 0 ||
      loss.id >= static_cast<int32_t>(nodes_.size()))
    throw InvalidArg("backward: loss not recorded on this tape");
  if (node(loss.id).value.size() != 1)
    throw NotScalar("backward: loss has " +
                    std::to_string(node(loss.id).value.size()) +
                    " elements, expected 1");

  // float64 adjoint buffer per node, allocated only when first written
  std::vector<std::vector<double>> adj(nodes_.size());
  auto ensure = [&](int32_t id) -> std::vector<double>& {
    auto& buf = adj[static_cast<size_t>(id)];
    if (buf.empty())
      buf.assign(static_cast<size_t>(node(id).value.size()), 0.0);
    return buf;
  };
  // adjoints of constant leaves are never read, skip the work of filling them
  auto wants_adjoint = [&](int32_t id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.op != Op::kLeaf || n.requires_grad;
  };
  ensure(loss.id)[0] = 1.0;

  for (int32_t id = loss.id; id >= 0; --id) {
    const auto& buf = adj[static_cast<size_t>(id)];
    if (buf.empty()) continue;
    const Node& n = nodes_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        const Tensor& av = node(n.a).value;
        const Tensor& bv = node(n.b).value;
        const int64_t m = av.dim(0), k = av.dim(1), c = bv.dim(1);
        MapCD dy(buf.data(), m, c);
        if (wants_adjoint(n.a)) {
          MapD da(ensure(n.a).data(), m, k);
          da.noalias() += dy * cast_to_double(bv, k, c).transpose();
        }
        if (wants_adjoint(n.b)) {
          MapD db(ensure(n.b).data(), k, c);
          db.noalias() += cast_to_double(av, m, k).transpose() * dy;
        }
        break;
      }
      case Op::kConv2d: {
        const Tensor& in = node(n.a).value;
        const Tensor& kv = node(n.b).value;
        const ConvDims d =
            conv_dims(in.shape(), kv.shape(), n.stride, n.padding);
        const int64_t plane = d.ho * d.wo;
        // dOut reordered to row (n,i,j), column f
        MatrixD dtmp(d.rows(), d.f);
        for (int64_t nn = 0; nn < d.n; ++nn)
          for (int64_t f = 0; f < d.f; ++f)
            for (int64_t o = 0; o < plane; ++o)
              dtmp(nn * plane + o, f) =
                  buf[static_cast<size_t>((nn * d.f + f) * plane + o)];
        if (wants_adjoint(n.b)) {
          std::vector<double> patches(
              static_cast<size_t>(d.rows() * d.cols()));
          im2col<double>(in.data(), d, patches.data());
          MapCD p(patches.data(), d.rows(), d.cols());
          MapD dk(ensure(n.b).data(), d.f, d.cols());
          dk.noalias() += dtmp.transpose() * p;
        }
        if (wants_adjoint(n.a)) {
          MatrixD dp(d.rows(), d.cols());
          dp.noalias() = dtmp * cast_to_double(kv, d.f, d.cols());
          col2im_add(dp.data(), d, ensure(n.a).data());
        }
        break;
      }
      case Op::kMaxPool2d: {
        auto& dx = ensure(n.a);
        for (size_t o = 0; o < n.argmax.size(); ++o)
          dx[static_cast<size_t>(n.argmax[o])] += buf[o];
        break;
      }
      case Op::kRelu: {
        const Tensor& xv = node(n.a).value;
        auto& dx = ensure(n.a);
        for (int64_t i = 0; i < xv.size(); ++i)
          if (xv[i] > 0.0f) dx[static_cast<size_t>(i)] += buf[static_cast<size_t>(i)];
        break;
      }
      case Op::kAdd: {
        auto& da = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i) da[i] += buf[i];
        auto& db = ensure(n.b);
        for (size_t i = 0; i < buf.size(); ++i) db[i] += buf[i];
        break;
      }
      case Op::kAddRowVec: {
        auto& da = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i) da[i] += buf[i];
        const int64_t rows = n.value.dim(0), cols = n.value.dim(1);
        auto& db = ensure(n.b);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c)
            db[static_cast<size_t>(c)] += buf[static_cast<size_t>(r * cols + c)];
        break;
      }
      case Op::kAddChan: {
        auto& da = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i) da[i] += buf[i];
        const int64_t nn = n.value.dim(0), c = n.value.dim(1),
                      plane = n.value.dim(2) * n.value.dim(3);
        auto& db = ensure(n.b);
        for (int64_t b = 0; b < nn; ++b)
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t base = (b * c + ch) * plane;
            double acc = 0.0;
            for (int64_t o = 0; o < plane; ++o)
              acc += buf[static_cast<size_t>(base + o)];
            db[static_cast<size_t>(ch)] += acc;
          }
        break;
      }
      case Op::kMul: {
        const Tensor& av = node(n.a).value;
        const Tensor& bv = node(n.b).value;
        auto& da = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i)
          da[i] += buf[i] * static_cast<double>(bv[static_cast<int64_t>(i)]);
        auto& db = ensure(n.b);
        for (size_t i = 0; i < buf.size(); ++i)
          db[i] += buf[i] * static_cast<double>(av[static_cast<int64_t>(i)]);
        break;
      }
      case Op::kScale: {
        auto& da = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i) da[i] += buf[i] * n.factor;
        break;
      }
      case Op::kSum: {
        auto& dx = ensure(n.a);
        const double g = buf[0];
        for (auto& v : dx) v += g;
        break;
      }
      case Op::kFlatten: {
        auto& dx = ensure(n.a);
        for (size_t i = 0; i < buf.size(); ++i) dx[i] += buf[i];
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const Tensor& lv = node(n.a).value;
        const int64_t batch = lv.dim(0), classes = lv.dim(1);
        const double g = buf[0] / static_cast<double>(batch);
        auto& dx = ensure(n.a);
        for (int64_t i = 0; i < batch; ++i) {
          const float* row = lv.data() + i * classes;
          double mx = row[0];
          for (int64_t k = 1; k < classes; ++k) mx = std::max<double>(mx, row[k]);
          double se = 0.0;
          for (int64_t k = 0; k < classes; ++k) se += std::exp(row[k] - mx);
          for (int64_t k = 0; k < classes; ++k) {
            double p = std::exp(row[k] - mx) / se;
            if (k == n.labels[static_cast<size_t>(i)]) p -= 1.0;
            dx[static_cast<size_t>(i * classes + k)] += g * p;
          }
        }
        break;
      }
    }
  }

  GradientMap grads;
  for (const auto& [key, id] : params_) {
    const auto& buf = adj[static_cast<size_t>(id)];
    Tensor g(node(id).value.shape());
    for (size_t i = 0; i < buf.size(); ++i)
      g[static_cast<int64_t>(i)] = static_cast<float>(buf[i]);
    grads.emplace(key, std::move(g));
  }
  return grads;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                            const Tensor& at, double eps) {
  if (!(eps > 0.0)) throw InvalidArg("finite_diff_gradient: eps must be positive");
  Tensor probe = at;
  Tensor grad(at.shape());
  for (int64_t j = 0; j < at.size(); ++j) {
    const float orig = at[j];
    const float hi = static_cast<float>(static_cast<double>(orig) + eps);
    const float lo = static_cast<float>(static_cast<double>(orig) - eps);
    probe[j] = hi;
    const double fh = f(probe);
    probe[j] = lo;
    const double fl = f(probe);
    probe[j] = orig;
    if (!std::isfinite(fh) || !std::isfinite(fl))
      throw NonFinite("finite_diff_gradient: probe evaluation not finite at index " +
                      std::to_string(j));
    // divide by the step that was actually representable in float32
    const double step = static_cast<double>(hi) - static_cast<double>(lo);
    grad[j] = static_cast<float>((fh - fl) / step);
  }
  return grad;
}

}  // namespace prunelab
