// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dstyle/nn/parameter_store.hpp"

namespace dstyle::nn {

struct OptimizerConfig {
  double learning_rate = 5e-5;
  double momentum = 0.9;
  double epsilon = 1e-6;
  double rho = 0.9;  ///< decay of the mean-square accumulator

  void validate() const;
};

/// RMSProp with momentum on the preconditioned step, per trainable tensor:
///   s <- rho s + (1 - rho) g^2
///   v <- momentum v + lr g / sqrt(s + eps)
///   w <- w - v
void rmsprop_step(ParameterStore& store, const OptimizerConfig& cfg);

}  // namespace dstyle::nn
