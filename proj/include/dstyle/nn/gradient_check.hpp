// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dstyle/nn/parameter_store.hpp"

namespace dstyle::nn {

struct GradCheckOptions {
  double h = 1e-6;
  /// Denominator floor of the relative error; differences between gradients
  /// smaller than this are effectively compared in absolute terms.
  double floor = 1e-8;
  /// Coordinates probed per parameter tensor; tensors at or below this size
  /// are checked exhaustively.
  std::size_t coords_per_tensor = 24;
  std::uint64_t seed = 7;
  bool include_frozen = false;  ///< also probe non-trainable entries
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  ///< "name[index]"
  std::size_t checked = 0;
};

/// Compares analytic gradients with central differences. `loss` must zero
/// nothing itself: the checker calls store.zero_grad() before the analytic
/// pass, and `loss` is expected to evaluate the objective and accumulate its
/// gradients into the store. Relative error is
/// |ga - gn| / max(|ga|, |gn|, floor). Throws NumericError on a non-finite loss.
GradCheckReport gradient_check(const std::function<double()>& loss, ParameterStore& store,
                               const GradCheckOptions& opt = {});

}  // namespace dstyle::nn
