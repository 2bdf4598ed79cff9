// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "dstyle/nn/parameter_store.hpp"
#include "dstyle/nn/tensor.hpp"

namespace dstyle::nn {

/// Single-layer GRU over [N, T, D] sequences, zero initial state:
///
///   z  = sigmoid(W_z x + U_z h + b_z)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * h~
///
/// Backward runs full BPTT and fills all nine parameter gradients.
class Gru {
 public:
  Gru(ParameterStore& store, const std::string& name, std::size_t input_dim, std::size_t hidden);

  /// Uniform(+-1/sqrt(H)) for every tensor.
  void init_uniform(std::mt19937_64& rng);

  std::size_t input_dim() const { return d_; }
  std::size_t hidden() const { return h_; }

  Tensor forward(const Tensor& in);  // -> [N, T, H]
  Tensor backward(const Tensor& grad_out);

 private:
  // Gate-stacked copies of the weights: rows [z; r; h].
  void pack(RowMatrix& w, RowMatrix& u, Eigen::RowVectorXd& b) const;

  std::size_t d_, h_;
  Parameter* wz_;
  Parameter* wr_;
  Parameter* wh_;
  Parameter* uz_;
  Parameter* ur_;
  Parameter* uh_;
  Parameter* bz_;
  Parameter* br_;
  Parameter* bh_;

  // Forward cache, time-major: row t*N + n.
  std::size_t n_ = 0, t_ = 0;
  RowMatrix x_;      // [T*N, D]
  RowMatrix hs_;     // [(T+1)*N, H], block 0 is the zero state
  RowMatrix z_, r_, cand_;  // [T*N, H]
};

}  // namespace dstyle::nn
