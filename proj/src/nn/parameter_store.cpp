// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/parameter_store.hpp"

#include "dstyle/error.hpp"

namespace dstyle::nn {

Parameter& ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw ShapeError("duplicate parameter " + name);
  Parameter p;
  p.grad = Tensor(init.shape());
  p.mean_square = Tensor(init.shape());
  p.velocity = Tensor(init.shape());
  p.value = std::move(init);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter " + name);
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParameterStore::trainable_size() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

}  // namespace dstyle::nn
