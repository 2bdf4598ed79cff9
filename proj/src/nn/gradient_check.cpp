// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "dstyle/error.hpp"

namespace dstyle::nn {

namespace {
double checked_loss(const std::function<double()>& loss) {
  const double v = loss();
  if (!std::isfinite(v)) throw NumericError("gradient check: non-finite loss");
  return v;
}
}  // namespace

GradCheckReport gradient_check(const std::function<double()>& loss, ParameterStore& store,
                               const GradCheckOptions& opt) {
  store.zero_grad();
  checked_loss(loss);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, p] : store.items()) analytic.emplace(name, p.grad);

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (auto& [name, p] : store.items()) {
    if (!p.trainable && !opt.include_frozen) continue;
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opt.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.coords_per_tensor);
    }
    for (std::size_t i : coords) {
      const double saved = p.value[i];
      p.value[i] = saved + opt.h;
      const double up = checked_loss(loss);
      p.value[i] = saved - opt.h;
      const double down = checked_loss(loss);
      p.value[i] = saved;
      const double gn = (up - down) / (2.0 * opt.h);
      const double ga = analytic.at(name)[i];
      const double rel = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), opt.floor});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  // Leave the store holding the analytic gradients at the unperturbed point.
  for (auto& [name, p] : store.items()) p.grad = analytic.at(name);
  return report;
}

}  // namespace dstyle::nn
