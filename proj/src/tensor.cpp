#include "prunelab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace prunelab {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw InvalidArg("tensor shape must not be empty");
  for (int64_t d : shape) {
    if (d <= 0)
      throw InvalidArg("tensor dimensions must be positive, got " +
                       shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw DimensionMismatch("data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  t.array().setConstant(value);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<float> values) {
  return Tensor(std::move(shape), std::vector<float>(values));
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Eigen::Map<MatrixF> Tensor::mat(int64_t rows, int64_t cols) {
  if (rows * cols != size())
    throw DimensionMismatch("cannot view " + shape_str(shape_) + " as " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(cols)};
}

Eigen::Map<const MatrixF> Tensor::mat(int64_t rows, int64_t cols) const {
  if (rows * cols != size())
    throw DimensionMismatch("cannot view " + shape_str(shape_) + " as " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(cols)};
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionMismatch(std::string(op) + ": shapes " +
                            shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " differ");
}
}  // namespace

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  out.array() = a.array() * b.array();
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  out.array() = a.array() + b.array();
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  out.array() = a.array() * s;
  return out;
}

Tensor absval(const Tensor& a) {
  Tensor out(a.shape());
  out.array() = a.array().abs();
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

}  // namespace prunelab
