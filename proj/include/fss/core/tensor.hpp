#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "fss/core/errors.hpp"

namespace fss {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

// Dense n-d array (rank 0..4), row-major flat storage on top of an Eigen
// array. Rank-2 tensors expose Eigen matrix maps so linear algebra stays
// expression-friendly; image ops index NCHW explicitly.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(shape_size(shape_));
  }
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    data_ = Storage::Constant(shape_size(shape_), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Scalar v) {
    Tensor t{Shape{}};
    t.data_.resize(1);
    t.data_(0) = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<size_t>(i)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_(i); }
  Scalar operator[](Index i) const { return data_(i); }

  Scalar value() const { return data_(0); }  // rank-0 / single element

  Scalar& at(Index i0) { return data_(i0); }
  Scalar& at(Index i0, Index i1) { return data_(i0 * shape_[1] + i1); }
  Scalar& at(Index i0, Index i1, Index i2) {
    return data_((i0 * shape_[1] + i1) * shape_[2] + i2);
  }
  Scalar& at(Index i0, Index i1, Index i2, Index i3) {
    return data_(((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3);
  }
  Scalar at(Index i0) const { return data_(i0); }
  Scalar at(Index i0, Index i1) const { return data_(i0 * shape_[1] + i1); }
  Scalar at(Index i0, Index i1, Index i2) const {
    return data_((i0 * shape_[1] + i1) * shape_[2] + i2);
  }
  Scalar at(Index i0, Index i1, Index i2, Index i3) const {
    return data_(((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3);
  }

  // Rank-2 views. Rows/cols follow the logical shape; storage is row-major.
  MatrixMap mat() {
    check_rank2();
    return MatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatrixMap mat() const {
    check_rank2();
    return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  // Any tensor viewed as a (rows x cols) matrix without copying.
  MatrixMap as_mat(Index rows, Index cols) {
    if (rows * cols != size()) throw InvalidInputError("as_mat: element count mismatch");
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap as_mat(Index rows, Index cols) const {
    if (rows * cols != size()) throw InvalidInputError("as_mat: element count mismatch");
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  static Tensor from_matrix(
      const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& m) {
    Tensor t{Shape{m.rows(), m.cols()}};
    t.mat() = m;
    return t;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) throw InvalidInputError("reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  void check_rank2() const {
    if (shape_.size() != 2) throw InvalidInputError("tensor is not rank-2");
  }

  Shape shape_;
  Storage data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

}  // namespace fss
