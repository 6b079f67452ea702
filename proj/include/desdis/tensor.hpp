#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace desdis {

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_to_string(std::span<const Index> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense n-dimensional real array, row-major. The shape is fixed at
/// construction; a rank-0 tensor holds exactly one element and plays the
/// role of a scalar. All numerical state in the project lives in these.
template <typename Scalar>
class Tensor {
 public:
  // Default-constructed tensor is a rank-0 zero.
  Tensor() : data_(1) { data_[0] = Scalar(0); }

  explicit Tensor(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_)) {
    data_.setZero();
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor from(std::vector<Index> shape, std::span<const Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_to_string(t.shape_) +
                       " (" + std::to_string(t.numel()) + " elements)");
    }
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = values[static_cast<std::size_t>(i)];
    return t;
  }

  static Tensor from(std::vector<Index> shape, std::initializer_list<Scalar> values) {
    return from(std::move(shape), std::span<const Scalar>(values.begin(), values.size()));
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_.size(); }
  bool is_scalar() const { return numel() == 1; }

  Index dim(Index axis) const {
    if (axis < 0 || axis >= rank()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_to_string(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  ArrayX<Scalar>& array() { return data_; }
  const ArrayX<Scalar>& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // The single element of a scalar tensor.
  Scalar value() const {
    if (!is_scalar()) {
      throw ShapeError("value() called on non-scalar tensor of shape " +
                       shape_to_string(shape_));
    }
    return data_[0];
  }

  // Row-major matrix view of a rank-2 tensor.
  Eigen::Map<RowMajorMatrix<Scalar>> matrix() {
    require_rank2();
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<const RowMajorMatrix<Scalar>> matrix() const {
    require_rank2();
    return {data_.data(), shape_[0], shape_[1]};
  }

  // Reinterpreting matrix view; rows*cols must cover the tensor exactly.
  Eigen::Map<RowMajorMatrix<Scalar>> matrix(Index rows, Index cols) {
    require_extent(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMajorMatrix<Scalar>> matrix(Index rows, Index cols) const {
    require_extent(rows, cols);
    return {data_.data(), rows, cols};
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  // Debug-mode guard for the all-values-finite invariant.
  void require_finite(const char* what) const {
    if (!all_finite()) {
      throw std::runtime_error(std::string(what) + ": non-finite value in tensor of shape " +
                               shape_to_string(shape_));
    }
  }

 private:
  void require_rank2() const {
    if (rank() != 2) {
      throw ShapeError("rank-2 view requested on tensor of shape " + shape_to_string(shape_));
    }
  }
  void require_extent(Index rows, Index cols) const {
    if (rows <= 0 || cols <= 0 || rows * cols != numel()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover tensor of shape " + shape_to_string(shape_));
    }
  }

  static Index checked_numel(const std::vector<Index>& shape) {
    Index n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] <= 0) {
        throw ShapeError("dimension " + std::to_string(i) + " must be positive, got " +
                         std::to_string(shape[i]));
      }
      n *= shape[i];
    }
    return n;
  }

  std::vector<Index> shape_;
  ArrayX<Scalar> data_;
};

}  // namespace desdis
