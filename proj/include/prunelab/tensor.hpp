#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "prunelab/errors.hpp"

namespace prunelab {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

using MatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major float32 array. Values are cheap to copy for the sizes this
// project works at and are treated as immutable once built; every operation
// returns a fresh Tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return full({1}, value); }
  static Tensor from(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // 2-D Eigen views; the tensor must have exactly `rows * cols` elements.
  Eigen::Map<MatrixF> mat(int64_t rows, int64_t cols);
  Eigen::Map<const MatrixF> mat(int64_t rows, int64_t cols) const;
  Eigen::Map<Eigen::ArrayXf> array() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<const Eigen::ArrayXf> array() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Elementwise helpers on plain tensors (no tape involvement).
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor absval(const Tensor& a);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace prunelab
