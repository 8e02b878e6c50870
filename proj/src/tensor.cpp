#include "pdgr/numerics/tensor.hpp"

#include <sstream>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(Vector::Zero(static_cast<Eigen::Index>(shape_numel(shape_)))) {}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::size_t>(data_.size())) {
    throw ShapeMismatch("shape " + shape_str(shape_) + " does not match " +
                        std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Tensor Tensor::scalar(double value) { return filled({}, value); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  Tensor t({values.size()});
  std::size_t i = 0;
  for (double v : values) t[i++] = v;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Tensor t({r, c});
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeMismatch("ragged matrix literal");
    for (double v : row) t[i++] = v;
  }
  return t;
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix() = m;
  return t;
}

Tensor Tensor::from_vector(const Eigen::Ref<const Vector>& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, v);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Eigen::Index Tensor::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return static_cast<Eigen::Index>(shape_[0]);
}

Eigen::Index Tensor::cols() const {
  const auto r = rows();
  return r == 0 ? 0 : static_cast<Eigen::Index>(numel()) / r;
}

Eigen::Map<RowMatrix> Tensor::matrix() { return {data_.data(), rows(), cols()}; }

Eigen::Map<const RowMatrix> Tensor::matrix() const { return {data_.data(), rows(), cols()}; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

}  // namespace pdgr
