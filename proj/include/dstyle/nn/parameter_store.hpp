// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "dstyle/nn/tensor.hpp"

namespace dstyle::nn {

/// A named weight with its gradient slot and RMSProp state. Non-trainable
/// entries (running statistics, input normalisation) are checkpointed but
/// never touched by the optimiser.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor mean_square;
  Tensor velocity;
  bool trainable = true;
};

/// Owns every parameter of a model. Entries are never erased, so references
/// handed out by add() stay valid for the lifetime of the store (including
/// across moves).
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, Tensor init, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

  void zero_grad();
  /// Number of trainable scalars.
  std::size_t trainable_size() const;

 private:
  std::map<std::string, Parameter> params_;
};

}  // namespace dstyle::nn
