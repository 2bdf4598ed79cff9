// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "dstyle/error.hpp"

namespace dstyle::nn {

namespace {

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t c_in, std::size_t c_out,
               std::size_t kh, std::size_t kw, Padding pad)
    : kernel_(&store.add(name + ".kernel", Tensor({c_out, c_in, kh, kw}))),
      bias_(&store.add(name + ".bias", Tensor({c_out}))),
      c_in_(c_in),
      c_out_(c_out),
      kh_(kh),
      kw_(kw),
      pad_(pad) {}

void Conv2d::init_he_uniform(std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(c_in_ * kh_ * kw_));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : kernel_->value.values()) v = u(rng);
  bias_->value.fill(0.0);
}

Shape Conv2d::output_shape(const Shape& in) const {
  if (in.size() != 4 || in[1] != c_in_) {
    throw ShapeError("conv2d expects [N," + std::to_string(c_in_) + ",H,W], got " + to_string(in));
  }
  const std::size_t hp = in[2] + 2 * pad_.h;
  const std::size_t wp = in[3] + 2 * pad_.w;
  if (kh_ > hp || kw_ > wp) {
    throw ShapeError("conv2d kernel " + std::to_string(kh_) + "x" + std::to_string(kw_) +
                     " larger than padded input " + std::to_string(hp) + "x" + std::to_string(wp));
  }
  return {in[0], c_out_, hp - kh_ + 1, wp - kw_ + 1};
}

Tensor Conv2d::forward(const Tensor& in) {
  const Shape out_shape = output_shape(in.shape());
  in_shape_ = in.shape();
  const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const std::size_t ho = out_shape[2], wo = out_shape[3];
  const std::size_t patch = c_in_ * kh_ * kw_;
  Tensor out(out_shape);
  auto kmat = kernel_->value.matrix(c_out_, patch);
  Eigen::Map<const Eigen::VectorXd> bias(bias_->value.data(), ix(c_out_));
  cols_.assign(n, RowMatrix());
  for (std::size_t s = 0; s < n; ++s) {
    RowMatrix& cols = cols_[s];
    cols.setZero(ix(patch), ix(ho * wo));
    const double* src = in.data() + s * c_in_ * h * w;
    for (std::size_t c = 0; c < c_in_; ++c) {
      for (std::size_t i = 0; i < kh_; ++i) {
        for (std::size_t j = 0; j < kw_; ++j) {
          double* row = cols.data() + ((c * kh_ + i) * kw_ + j) * ho * wo;
          for (std::size_t y = 0; y < ho; ++y) {
            const auto yy = static_cast<std::ptrdiff_t>(y + i) - static_cast<std::ptrdiff_t>(pad_.h);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* srow = src + (c * h + static_cast<std::size_t>(yy)) * w;
            for (std::size_t x = 0; x < wo; ++x) {
              const auto xx = static_cast<std::ptrdiff_t>(x + j) - static_cast<std::ptrdiff_t>(pad_.w);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              row[y * wo + x] = srow[xx];
            }
          }
        }
      }
    }
    MatMap o(out.data() + s * c_out_ * ho * wo, ix(c_out_), ix(ho * wo));
    o.noalias() = kmat * cols;
    o.colwise() += bias;
  }
  out.require_finite("conv2d");
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Shape out_shape = output_shape(in_shape_);
  if (grad_out.shape() != out_shape) throw ShapeError("conv2d backward: gradient shape mismatch");
  const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const std::size_t ho = out_shape[2], wo = out_shape[3];
  const std::size_t patch = c_in_ * kh_ * kw_;
  Tensor grad_in(in_shape_);
  auto kmat = kernel_->value.matrix(c_out_, patch);
  auto dk = kernel_->grad.matrix(c_out_, patch);
  Eigen::Map<Eigen::VectorXd> db(bias_->grad.data(), ix(c_out_));
  RowMatrix dcols;
  for (std::size_t s = 0; s < n; ++s) {
    ConstMatMap g(grad_out.data() + s * c_out_ * ho * wo, ix(c_out_), ix(ho * wo));
    dk.noalias() += g * cols_[s].transpose();
    db += g.rowwise().sum();
    dcols.noalias() = kmat.transpose() * g;
    double* dst = grad_in.data() + s * c_in_ * h * w;
    for (std::size_t c = 0; c < c_in_; ++c) {
      for (std::size_t i = 0; i < kh_; ++i) {
        for (std::size_t j = 0; j < kw_; ++j) {
          const double* row = dcols.data() + ((c * kh_ + i) * kw_ + j) * ho * wo;
          for (std::size_t y = 0; y < ho; ++y) {
            const auto yy = static_cast<std::ptrdiff_t>(y + i) - static_cast<std::ptrdiff_t>(pad_.h);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            double* drow = dst + (c * h + static_cast<std::size_t>(yy)) * w;
            for (std::size_t x = 0; x < wo; ++x) {
              const auto xx = static_cast<std::ptrdiff_t>(x + j) - static_cast<std::ptrdiff_t>(pad_.w);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              drow[xx] += row[y * wo + x];
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// MaxPoolRows

Shape MaxPoolRows::output_shape(const Shape& in) const {
  if (in.size() != 4) throw ShapeError("max-pool expects [N,C,H,W], got " + to_string(in));
  if (in[2] < pool_) {
    throw ShapeError("max-pool window " + std::to_string(pool_) + " exceeds feature axis " +
                     std::to_string(in[2]));
  }
  return {in[0], in[1], in[2] - pool_ + 1, in[3]};
}

Tensor MaxPoolRows::forward(const Tensor& in) {
  const Shape os = output_shape(in.shape());
  in_shape_ = in.shape();
  const std::size_t planes = os[0] * os[1], h = in_shape_[2], w = in_shape_[3], ho = os[2];
  Tensor out(os);
  argmax_.assign(out.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t best = y;
        for (std::size_t k = y + 1; k < y + pool_; ++k)
          if (src[k * w + x] > src[best * w + x]) best = k;
        const std::size_t o = (p * ho + y) * w + x;
        out[o] = src[best * w + x];
        argmax_[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

Tensor MaxPoolRows::backward(const Tensor& grad_out) const {
  if (grad_out.shape() != output_shape(in_shape_)) throw ShapeError("max-pool backward: shape mismatch");
  Tensor grad_in(in_shape_);
  const std::size_t planes = in_shape_[0] * in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const std::size_t ho = h - pool_ + 1;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t o = (p * ho + y) * w + x;
        grad_in[(p * h + argmax_[o]) * w + x] += grad_out[o];
      }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Relu / Dropout

Tensor Relu::forward(const Tensor& in) {
  out_ = in;
  for (double& v : out_.values()) v = std::max(v, 0.0);
  return out_;
}

Tensor Relu::backward(const Tensor& grad_out) const {
  if (grad_out.shape() != out_.shape()) throw ShapeError("relu backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (out_[i] <= 0.0) g[i] = 0.0;
  return g;
}

Dropout::Dropout(double p) : p_(p) {
  if (!(p >= 0.0 && p < 1.0)) throw UsageError("dropout probability must be in [0,1)");
}

Tensor Dropout::forward(const Tensor& in, Mode mode, std::uint64_t seed) {
  if (mode == Mode::Infer || p_ == 0.0) {
    mask_.clear();
    return in;
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p_);
  const double scale = 1.0 / (1.0 - p_);
  mask_.resize(in.size());
  Tensor out = in;
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask_[i] = keep(rng) ? scale : 0.0;
    out[i] *= mask_[i];
  }
  return out;
}

Tensor Dropout::forward_shared(const Tensor& in, std::size_t axis, Mode mode, std::uint64_t seed) {
  if (axis >= in.rank()) throw ShapeError("dropout: axis out of range for " + to_string(in.shape()));
  if (mode == Mode::Infer || p_ == 0.0) {
    mask_.clear();
    return in;
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= in.dim(k);
  for (std::size_t k = axis + 1; k < in.rank(); ++k) inner *= in.dim(k);
  const std::size_t len = in.dim(axis);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p_);
  const double scale = 1.0 / (1.0 - p_);
  std::vector<double> unit(outer * inner);
  for (double& m : unit) m = keep(rng) ? scale : 0.0;
  mask_.resize(in.size());
  Tensor out = in;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t e = (o * len + t) * inner + i;
        mask_[e] = unit[o * inner + i];
        out[e] *= mask_[e];
      }
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out) const {
  if (mask_.empty()) return grad_out;
  if (grad_out.size() != mask_.size()) throw ShapeError("dropout backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
  return g;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
             Activation act)
    : weight_(&store.add(name + ".weight", Tensor({out, in}))),
      bias_(&store.add(name + ".bias", Tensor({out}))),
      act_(act) {}

void Dense::init_uniform(std::mt19937_64& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(weight_->value.dim(1)));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : weight_->value.values()) v = u(rng);
  bias_->value.fill(0.0);
}

Tensor Dense::forward(const Tensor& in) {
  const std::size_t h = weight_->value.dim(0), d = weight_->value.dim(1);
  if (in.rank() != 2 || in.dim(1) != d) {
    throw ShapeError("dense expects [N," + std::to_string(d) + "], got " + to_string(in.shape()));
  }
  const std::size_t n = in.dim(0);
  in_ = in;
  Tensor out({n, h});
  auto o = out.matrix(n, h);
  o.noalias() = in.matrix(n, d) * weight_->value.matrix(h, d).transpose();
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_->value.data(), ix(h));
  if (act_ == Activation::Sigmoid)
    for (double& v : out.values()) v = sigmoid(v);
  out.require_finite("dense");
  out_ = out;
  return out;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const std::size_t h = weight_->value.dim(0), d = weight_->value.dim(1);
  const std::size_t n = in_.dim(0);
  if (grad_out.shape() != Shape{n, h}) throw ShapeError("dense backward: shape mismatch");
  Tensor g = grad_out;
  if (act_ == Activation::Sigmoid)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= out_[i] * (1.0 - out_[i]);
  auto gm = g.matrix(n, h);
  weight_->grad.matrix(h, d).noalias() += gm.transpose() * in_.matrix(n, d);
  Eigen::Map<Eigen::RowVectorXd>(bias_->grad.data(), ix(h)) += gm.colwise().sum();
  Tensor grad_in({n, d});
  grad_in.matrix(n, d).noalias() = gm * weight_->value.matrix(h, d);
  return grad_in;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t dim)
    : gamma_(&store.add(name + ".gamma", Tensor({dim}, 1.0))),
      beta_(&store.add(name + ".beta", Tensor({dim}, 0.0))),
      running_mean_(&store.add(name + ".running_mean", Tensor({dim}, 0.0), false)),
      running_var_(&store.add(name + ".running_var", Tensor({dim}, 1.0), false)) {}

Tensor BatchNorm::forward(const Tensor& in, Mode mode) {
  const std::size_t d = gamma_->value.size();
  if (in.rank() != 2 || in.dim(1) != d) {
    throw ShapeError("batch-norm expects [N," + std::to_string(d) + "], got " + to_string(in.shape()));
  }
  const std::size_t n = in.dim(0);
  last_mode_ = mode;
  Tensor out({n, d});
  if (mode == Mode::Infer) {
    for (std::size_t j = 0; j < d; ++j) {
      const double inv = 1.0 / std::sqrt(running_var_->value[j] + kEpsilon);
      for (std::size_t i = 0; i < n; ++i) {
        out[i * d + j] = gamma_->value[j] * (in[i * d + j] - running_mean_->value[j]) * inv +
                         beta_->value[j];
      }
    }
    return out;
  }
  if (n < 2) throw ShapeError("batch-norm in train mode needs a batch of at least 2");
  xhat_ = Tensor({n, d});
  inv_std_.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i * d + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i * d + j] - mean) * (in[i * d + j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[j] = inv;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (in[i * d + j] - mean) * inv;
      xhat_[i * d + j] = xh;
      out[i * d + j] = gamma_->value[j] * xh + beta_->value[j];
    }
    running_mean_->value[j] = kMomentum * running_mean_->value[j] + (1.0 - kMomentum) * mean;
    running_var_->value[j] = kMomentum * running_var_->value[j] + (1.0 - kMomentum) * var;
  }
  return out;
}

void BatchNorm::set_running_statistics(const std::vector<double>& mean, const std::vector<double>& var) {
  const std::size_t d = gamma_->value.size();
  if (mean.size() != d || var.size() != d) throw ShapeError("batch-norm statistics: expected " + std::to_string(d));
  for (std::size_t j = 0; j < d; ++j) {
    if (!std::isfinite(mean[j]) || !(var[j] >= 0.0)) throw NumericError("batch-norm statistics must be finite");
    running_mean_->value[j] = mean[j];
    running_var_->value[j] = var[j];
  }
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  if (last_mode_ != Mode::Train) throw ShapeError("batch-norm backward requires a train-mode forward");
  const std::size_t n = xhat_.dim(0), d = xhat_.dim(1);
  if (grad_out.shape() != xhat_.shape()) throw ShapeError("batch-norm backward: shape mismatch");
  Tensor grad_in({n, d});
  const double nn = static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += grad_out[i * d + j];
      sum_gx += grad_out[i * d + j] * xhat_[i * d + j];
    }
    gamma_->grad[j] += sum_gx;
    beta_->grad[j] += sum_g;
    const double k = gamma_->value[j] * inv_std_[j] / nn;
    for (std::size_t i = 0; i < n; ++i) {
      grad_in[i * d + j] = k * (nn * grad_out[i * d + j] - sum_g - xhat_[i * d + j] * sum_gx);
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,C], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor p = logits;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = p.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      row[k] = std::exp(row[k] - mx);
      z += row[k];
    }
    for (std::size_t k = 0; k < c; ++k) row[k] /= z;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  LossResult r;
  r.grad = Tensor({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw DataError("label " + std::to_string(labels[i]) + " out of range");
    const double* row = logits.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    const double log_z = std::log(z) + mx;
    r.loss += log_z - row[labels[i]];
    for (std::size_t k = 0; k < c; ++k) {
      const double pk = std::exp(row[k] - log_z);
      r.grad[i * c + k] = (pk - (k == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  r.loss /= static_cast<double>(n);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite cross-entropy loss");
  return r;
}

}  // namespace dstyle::nn
