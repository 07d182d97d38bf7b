#include "popgraph/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace popgraph {

std::string Shape::to_string() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                     Shape{rows, cols}.to_string());
  }
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> Matrix::column_values(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) {
    if (col_indices[e] == c) return values[e];
  }
  return 0.0;
}

Matrix SparseMatrix::to_dense() const {
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) {
      out(r, col_indices[e]) += values[e];
    }
  }
  return out;
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  if (!node->value.all_finite()) throw NumericError("Tensor::constant: non-finite value");
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  if (!node->value.all_finite()) throw NumericError("Tensor::parameter: non-finite value");
  node->grad = Matrix(node->value.rows(), node->value.cols());
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return requires_grad ? parameter(Matrix(1, 1, value)) : constant(Matrix(1, 1, value));
}

const Matrix& Tensor::grad() const {
  if (!requires_grad()) throw std::logic_error("Tensor::grad: tensor does not require grad");
  return node_->grad;
}

Matrix& Tensor::mutable_grad() {
  if (!requires_grad()) throw std::logic_error("Tensor::grad: tensor does not require grad");
  return node_->grad;
}

double Tensor::item() const {
  if (shape() != Shape{1, 1}) {
    throw ShapeError("Tensor::item: expected [1x1], got " + shape().to_string());
  }
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (requires_grad()) node_->grad.fill(0.0);
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  return requires_grad() ? parameter(node_->value) : constant(node_->value);
}

}  // namespace popgraph
