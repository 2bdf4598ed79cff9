// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/gru.hpp"

#include <cmath>

#include "dstyle/error.hpp"

namespace dstyle::nn {

namespace {
Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }
}  // namespace

Gru::Gru(ParameterStore& store, const std::string& name, std::size_t input_dim, std::size_t hidden)
    : d_(input_dim),
      h_(hidden),
      wz_(&store.add(name + ".W_z", Tensor({hidden, input_dim}))),
      wr_(&store.add(name + ".W_r", Tensor({hidden, input_dim}))),
      wh_(&store.add(name + ".W_h", Tensor({hidden, input_dim}))),
      uz_(&store.add(name + ".U_z", Tensor({hidden, hidden}))),
      ur_(&store.add(name + ".U_r", Tensor({hidden, hidden}))),
      uh_(&store.add(name + ".U_h", Tensor({hidden, hidden}))),
      bz_(&store.add(name + ".b_z", Tensor({hidden}))),
      br_(&store.add(name + ".b_r", Tensor({hidden}))),
      bh_(&store.add(name + ".b_h", Tensor({hidden}))) {}

void Gru::init_uniform(std::mt19937_64& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(h_));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Parameter* p : {wz_, wr_, wh_, uz_, ur_, uh_, bz_, br_, bh_})
    for (double& v : p->value.values()) v = u(rng);
}

void Gru::pack(RowMatrix& w, RowMatrix& u, Eigen::RowVectorXd& b) const {
  const auto H = ix(h_), D = ix(d_);
  w.resize(3 * H, D);
  w.middleRows(0, H) = wz_->value.matrix(h_, d_);
  w.middleRows(H, H) = wr_->value.matrix(h_, d_);
  w.middleRows(2 * H, H) = wh_->value.matrix(h_, d_);
  u.resize(3 * H, H);
  u.middleRows(0, H) = uz_->value.matrix(h_, h_);
  u.middleRows(H, H) = ur_->value.matrix(h_, h_);
  u.middleRows(2 * H, H) = uh_->value.matrix(h_, h_);
  b.resize(3 * H);
  b.segment(0, H) = Eigen::Map<const Eigen::RowVectorXd>(bz_->value.data(), H);
  b.segment(H, H) = Eigen::Map<const Eigen::RowVectorXd>(br_->value.data(), H);
  b.segment(2 * H, H) = Eigen::Map<const Eigen::RowVectorXd>(bh_->value.data(), H);
}

Tensor Gru::forward(const Tensor& in) {
  if (in.rank() != 3 || in.dim(2) != d_) {
    throw ShapeError("gru expects [N,T," + std::to_string(d_) + "], got " + to_string(in.shape()));
  }
  n_ = in.dim(0);
  t_ = in.dim(1);
  const auto N = ix(n_), T = ix(t_), H = ix(h_), D = ix(d_);

  x_.resize(T * N, D);
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t t = 0; t < t_; ++t)
      x_.row(ix(t * n_ + n)) = Eigen::Map<const Eigen::RowVectorXd>(in.data() + (n * t_ + t) * d_, D);

  RowMatrix w, u;
  Eigen::RowVectorXd b;
  pack(w, u, b);

  RowMatrix xw(T * N, 3 * H);
  xw.noalias() = x_ * w.transpose();
  xw.rowwise() += b;

  hs_.setZero((T + 1) * N, H);
  z_.resize(T * N, H);
  r_.resize(T * N, H);
  cand_.resize(T * N, H);
  const RowMatrix u_zr = u.topRows(2 * H);
  const RowMatrix u_h = u.bottomRows(H);
  RowMatrix hu(N, 2 * H), rh(N, H), cu(N, H);
  for (Eigen::Index t = 0; t < T; ++t) {
    auto h_prev = hs_.middleRows(t * N, N);
    hu.noalias() = h_prev * u_zr.transpose();
    auto xt = xw.middleRows(t * N, N);
    auto z = z_.middleRows(t * N, N);
    auto r = r_.middleRows(t * N, N);
    z = (-(xt.leftCols(H) + hu.leftCols(H))).array().exp().matrix();
    z = (1.0 + z.array()).inverse().matrix();
    r = (-(xt.middleCols(H, H) + hu.rightCols(H))).array().exp().matrix();
    r = (1.0 + r.array()).inverse().matrix();
    rh = (r.array() * h_prev.array()).matrix();
    cu.noalias() = rh * u_h.transpose();
    auto c = cand_.middleRows(t * N, N);
    c = (xt.rightCols(H) + cu).array().tanh().matrix();
    hs_.middleRows((t + 1) * N, N) =
        ((1.0 - z.array()) * h_prev.array() + z.array() * c.array()).matrix();
  }

  Tensor out({n_, t_, h_});
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t t = 0; t < t_; ++t)
      Eigen::Map<Eigen::RowVectorXd>(out.data() + (n * t_ + t) * h_, H) = hs_.row(ix((t + 1) * n_ + n));
  out.require_finite("gru");
  return out;
}

Tensor Gru::backward(const Tensor& grad_out) {
  if (grad_out.shape() != Shape{n_, t_, h_}) throw ShapeError("gru backward: gradient shape mismatch");
  const auto N = ix(n_), T = ix(t_), H = ix(h_), D = ix(d_);

  RowMatrix w, u;
  Eigen::RowVectorXd b;
  pack(w, u, b);
  const RowMatrix u_zr = u.topRows(2 * H);
  const RowMatrix u_h = u.bottomRows(H);

  RowMatrix dpre(T * N, 3 * H);  // gradients of the gate pre-activations
  RowMatrix du = RowMatrix::Zero(3 * H, H);
  RowMatrix dh = RowMatrix::Zero(N, H);
  RowMatrix dh_prev(N, H), drh(N, H), rh(N, H);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    for (std::size_t n = 0; n < n_; ++n)
      dh.row(ix(n)) += Eigen::Map<const Eigen::RowVectorXd>(
          grad_out.data() + (n * t_ + static_cast<std::size_t>(t)) * h_, H);
    auto h_prev = hs_.middleRows(t * N, N);
    auto z = z_.middleRows(t * N, N);
    auto r = r_.middleRows(t * N, N);
    auto c = cand_.middleRows(t * N, N);
    auto da = dpre.middleRows(t * N, N);

    // candidate pre-activation
    da.rightCols(H) = (dh.array() * z.array() * (1.0 - c.array().square())).matrix();
    // update gate pre-activation
    da.leftCols(H) =
        (dh.array() * (c.array() - h_prev.array()) * z.array() * (1.0 - z.array())).matrix();
    dh_prev = (dh.array() * (1.0 - z.array())).matrix();

    rh = (r.array() * h_prev.array()).matrix();
    du.bottomRows(H).noalias() += da.rightCols(H).transpose() * rh;
    drh.noalias() = da.rightCols(H) * u_h;
    // reset gate pre-activation
    da.middleCols(H, H) = (drh.array() * h_prev.array() * r.array() * (1.0 - r.array())).matrix();
    dh_prev += (drh.array() * r.array()).matrix();

    du.topRows(2 * H).noalias() += da.leftCols(2 * H).transpose() * h_prev;
    dh_prev.noalias() += da.leftCols(2 * H) * u_zr;
    dh = dh_prev;
  }

  RowMatrix dw(3 * H, D);
  dw.noalias() = dpre.transpose() * x_;
  Eigen::RowVectorXd db = dpre.colwise().sum();

  wz_->grad.matrix(h_, d_) += dw.middleRows(0, H);
  wr_->grad.matrix(h_, d_) += dw.middleRows(H, H);
  wh_->grad.matrix(h_, d_) += dw.middleRows(2 * H, H);
  uz_->grad.matrix(h_, h_) += du.middleRows(0, H);
  ur_->grad.matrix(h_, h_) += du.middleRows(H, H);
  uh_->grad.matrix(h_, h_) += du.middleRows(2 * H, H);
  Eigen::Map<Eigen::RowVectorXd>(bz_->grad.data(), H) += db.segment(0, H);
  Eigen::Map<Eigen::RowVectorXd>(br_->grad.data(), H) += db.segment(H, H);
  Eigen::Map<Eigen::RowVectorXd>(bh_->grad.data(), H) += db.segment(2 * H, H);

  RowMatrix dx(T * N, D);
  dx.noalias() = dpre * w;
  Tensor grad_in({n_, t_, d_});
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t t = 0; t < t_; ++t)
      Eigen::Map<Eigen::RowVectorXd>(grad_in.data() + (n * t_ + t) * d_, D) = dx.row(ix(t * n_ + n));
  return grad_in;
}

}  // namespace dstyle::nn
