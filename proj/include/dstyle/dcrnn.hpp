// SPDX-License-Identifier: Apache-2.0
//
// Convolutional-recurrent driver classifier built from the nn layers.
//
//   input 7|F| x T
//   conv1 16 @ (7|F| x 5), time padded by 2      -> 16 x 1 x T, ReLU
//   channels read as a 16-row feature axis        -> 16 x T
//   max-pool 8x1 stride 1, dropout                -> 9 x T
//   conv2 16 @ 3x3, both axes padded by 1, ReLU   -> 16 x 9 x T
//   max-pool 8x1 stride 1, dropout                -> 16 x 2 x T
//   stack channels                                -> 32 x T
//   concat normalised input (residual)            -> (32 + 7|F|) x T
//   GRU(100), dropout, GRU(100), last step, dropout
//   FC1 100 sigmoid (latent), batch-norm, dropout, FC2 num_drivers
//
// The ablated variant drops the residual concat and the batch-norm.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dstyle/nn/gru.hpp"
#include "dstyle/nn/layers.hpp"
#include "dstyle/nn/parameter_store.hpp"

namespace dstyle::dcrnn {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

struct ArchitectureConfig {
  std::size_t feature_count = 3;  ///< |F|
  std::size_t time_len = 128;     ///< 2 L1 / L2
  std::size_t conv1_filters = 16;
  std::size_t conv1_width = 5;
  std::size_t conv2_filters = 16;
  std::size_t conv2_kernel = 3;
  std::size_t pool = 8;
  std::size_t gru_hidden = 100;
  std::size_t fc1_units = 100;
  std::size_t num_drivers = 2;
  double dropout = 0.5;
  bool ablation_no_bn_residual = false;

  std::string to_json() const;
  static ArchitectureConfig from_json(const std::string& text);
  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

/// Shape arithmetic implied by a configuration. Throws ShapeError when the
/// stack cannot be wired (e.g. fewer conv1 filters than the pool window).
struct DerivedShapes {
  std::size_t input_rows;    ///< 7|F|
  std::size_t pool1_rows;    ///< conv1_filters - pool + 1
  std::size_t pool2_rows;    ///< |F'|
  std::size_t stacked_rows;  ///< conv2_filters * |F'|
  std::size_t gru_input;     ///< stacked_rows (+ input_rows with the residual)
};
DerivedShapes derive_shapes(const ArchitectureConfig& cfg);

struct ForwardTrace {
  Tensor logits;  ///< [N, num_drivers], pre-softmax
  Tensor latent;  ///< [N, fc1_units], FC1 sigmoid output
  std::vector<std::pair<std::string, Shape>> shapes;  ///< per stage, batch axis included
};

class Dcrnn {
 public:
  Dcrnn(const ArchitectureConfig& cfg, std::uint64_t seed);
  Dcrnn(Dcrnn&&) = default;
  Dcrnn& operator=(Dcrnn&&) = default;

  const ArchitectureConfig& config() const { return cfg_; }
  const DerivedShapes& shapes() const { return shapes_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  /// Per-row standardisation applied to every input map; stored with the
  /// checkpoint as frozen parameters.
  void set_input_normalization(const std::vector<double>& mean, const std::vector<double>& stddev);

  /// batch: [N, 7|F|, T]. Infer mode disables dropout and uses batch-norm
  /// running statistics; `seed` drives the dropout masks in train mode.
  ForwardTrace forward(const Tensor& batch, Mode mode, std::uint64_t seed = 0);

  /// Cross-entropy against `labels` for the last train-mode forward;
  /// accumulates every parameter gradient and returns the mean loss.
  double backward(const std::vector<std::size_t>& labels);

  bool has_batch_norm() const { return bn_.has_value(); }
  /// Sets the FC1 batch-norm running statistics; no-op for the ablation.
  void set_batch_norm_statistics(const std::vector<double>& mean, const std::vector<double>& var);

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  ArchitectureConfig cfg_;
  DerivedShapes shapes_;
  nn::ParameterStore store_;
  nn::Parameter* norm_mean_;
  nn::Parameter* norm_std_;
  nn::Conv2d conv1_;
  nn::Relu relu1_;
  nn::MaxPoolRows pool1_;
  nn::Dropout drop1_;
  nn::Conv2d conv2_;
  nn::Relu relu2_;
  nn::MaxPoolRows pool2_;
  nn::Dropout drop2_;
  nn::Gru gru1_;
  nn::Dropout drop3_;
  nn::Gru gru2_;
  nn::Dropout drop4_;
  nn::Dense fc1_;
  std::optional<nn::BatchNorm> bn_;
  nn::Dropout drop5_;
  nn::Dense fc2_;

  std::optional<Tensor> last_logits_;  // set by train-mode forward
  std::size_t last_n_ = 0;
};

}  // namespace dstyle::dcrnn
