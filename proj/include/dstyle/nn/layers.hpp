// SPDX-License-Identifier: Apache-2.0
//
// Layers with explicit forward/backward passes. Each layer caches what its
// backward pass needs from the most recent forward call; parameter gradients
// are accumulated (+=) into the owning ParameterStore.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dstyle/nn/parameter_store.hpp"
#include "dstyle/nn/tensor.hpp"

namespace dstyle::nn {

enum class Mode { Train, Infer };

struct Padding {
  std::size_t h = 0;
  std::size_t w = 0;
};

/// Stride-1 cross-correlation with zero padding over [N, C_in, H, W] inputs.
class Conv2d {
 public:
  Conv2d(ParameterStore& store, const std::string& name, std::size_t c_in, std::size_t c_out,
         std::size_t kh, std::size_t kw, Padding pad);

  /// He-uniform kernel, zero bias.
  void init_he_uniform(std::mt19937_64& rng);
  /// Throws ShapeError when the kernel does not fit the padded input.
  Shape output_shape(const Shape& in) const;

  Tensor forward(const Tensor& in);
  Tensor backward(const Tensor& grad_out);

 private:
  Parameter* kernel_;  // [C_out, C_in, kh, kw]
  Parameter* bias_;    // [C_out]
  std::size_t c_in_, c_out_, kh_, kw_;
  Padding pad_;
  Shape in_shape_;
  std::vector<RowMatrix> cols_;  // im2col per sample
};

/// Max over a sliding window of `pool` rows along axis 2 of [N, C, H, W],
/// stride 1. Ties go to the lowest row index.
class MaxPoolRows {
 public:
  explicit MaxPoolRows(std::size_t pool) : pool_(pool) {}
  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& in);
  Tensor backward(const Tensor& grad_out) const;

 private:
  std::size_t pool_;
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

class Relu {
 public:
  Tensor forward(const Tensor& in);
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor out_;
};

/// Inverted dropout: survivors are scaled by 1/(1-p) in training.
class Dropout {
 public:
  explicit Dropout(double p);
  Tensor forward(const Tensor& in, Mode mode, std::uint64_t seed);
  /// One mask value per position with `axis` collapsed, broadcast along it.
  /// Sequences feeding a recurrent layer share their mask over time.
  Tensor forward_shared(const Tensor& in, std::size_t axis, Mode mode, std::uint64_t seed);
  Tensor backward(const Tensor& grad_out) const;
  const std::vector<double>& mask() const { return mask_; }

 private:
  double p_;
  std::vector<double> mask_;  // empty when the last forward was an identity
};

enum class Activation { None, Sigmoid };

/// Affine map over [N, D] -> [N, H] with optional sigmoid.
class Dense {
 public:
  Dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
        Activation act);
  /// Uniform(+-1/sqrt(fan_in)) weights, zero bias.
  void init_uniform(std::mt19937_64& rng);
  Tensor forward(const Tensor& in);
  Tensor backward(const Tensor& grad_out);

 private:
  Parameter* weight_;  // [H, D]
  Parameter* bias_;    // [H]
  Activation act_;
  Tensor in_;
  Tensor out_;
};

/// Per-feature normalisation over the batch axis of [N, D].
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.99;

  BatchNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  /// Train mode needs N >= 2 and updates the running statistics.
  Tensor forward(const Tensor& in, Mode mode);
  Tensor backward(const Tensor& grad_out);
  /// Replaces the running statistics used in infer mode.
  void set_running_statistics(const std::vector<double>& mean, const std::vector<double>& var);

 private:
  Parameter* gamma_;
  Parameter* beta_;
  Parameter* running_mean_;
  Parameter* running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  Mode last_mode_ = Mode::Infer;
};

/// Row-wise softmax of [N, C] logits, stabilised by the row max.
Tensor softmax(const Tensor& logits);

struct LossResult {
  double loss = 0.0;  ///< mean over the batch of -log softmax(label)
  Tensor grad;        ///< (softmax - onehot) / N
};

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

}  // namespace dstyle::nn
