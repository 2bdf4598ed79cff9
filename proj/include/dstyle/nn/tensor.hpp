// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dstyle::nn {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

std::string to_string(const Shape& s);

/// Dense row-major float64 array. Storage is aligned to Eigen's maximum
/// alignment so vectorized reductions do not depend on heap addresses.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// View the buffer as a rows x cols matrix; rows*cols must equal size().
  MatMap matrix(std::size_t rows, std::size_t cols);
  ConstMatMap matrix(std::size_t rows, std::size_t cols) const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  /// Throws NumericError naming `where` if any entry is NaN or infinite.
  void require_finite(std::string_view where) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

}  // namespace dstyle::nn
