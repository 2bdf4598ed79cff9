// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dstyle/error.hpp"

namespace dstyle::nn {

namespace {
std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != volume(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

MatMap Tensor::matrix(std::size_t rows, std::size_t cols) {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + to_string(shape_));
  return MatMap(data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap Tensor::matrix(std::size_t rows, std::size_t cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + to_string(shape_));
  return ConstMatMap(data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (volume(shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::require_finite(std::string_view where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(where));
  }
}

}  // namespace dstyle::nn
