// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/optimizer.hpp"

#include <cmath>

#include "dstyle/error.hpp"

namespace dstyle::nn {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw UsageError("learning rate and epsilon must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0,1)");
  if (!(rho >= 0.0 && rho < 1.0)) throw UsageError("rho must be in [0,1)");
}

void rmsprop_step(ParameterStore& store, const OptimizerConfig& cfg) {
  for (auto& [name, p] : store.items()) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      double& s = p.mean_square[i];
      double& v = p.velocity[i];
      s = cfg.rho * s + (1.0 - cfg.rho) * g * g;
      v = cfg.momentum * v + cfg.learning_rate * g / std::sqrt(s + cfg.epsilon);
      p.value[i] -= v;
    }
    p.value.require_finite(name);
  }
}

}  // namespace dstyle::nn
