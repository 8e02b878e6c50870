#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdgr {

using Shape = std::vector<std::size_t>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrix = RowMatrixX<double>;
using Vector = VectorX<double>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// Rank-2 tensors are viewed as `RowMatrix` through `matrix()`; higher ranks
/// collapse trailing dimensions into columns. A rank-0 tensor holds a single
/// scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m);
  static Tensor from_vector(const Eigen::Ref<const Vector>& v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return static_cast<std::size_t>(data_.size()); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  double operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  /// Value of a single-element tensor.
  double item() const;

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  Eigen::Map<RowMatrix> matrix();
  Eigen::Map<const RowMatrix> matrix() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vector data_;
};

}  // namespace pdgr
