// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dstyle/error.hpp"
#include "dstyle/nn/checkpoint.hpp"
#include "dstyle/nn/gradient_check.hpp"
#include "dstyle/nn/gru.hpp"
#include "dstyle/nn/layers.hpp"
#include "dstyle/nn/optimizer.hpp"
#include "gradcheck_cases.hpp"

using namespace dstyle;
using namespace dstyle::nn;

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

TEST_SUITE("neural_core") {
  TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1, 2, 3}), ShapeError);
    t[4] = std::nan("");
    CHECK_THROWS_AS(t.require_finite("t"), NumericError);
  }

  TEST_CASE("conv2d scalar and identity kernels") {
    ParameterStore store;
    Conv2d scalar(store, "s", 1, 1, 1, 1, {0, 0});
    store.at("s.kernel").value[0] = 3.0;
    Tensor x({1, 1, 1, 1}, 2.0);
    CHECK(scalar.forward(x)[0] == 6.0);

    Conv2d ident(store, "i", 1, 1, 3, 3, {1, 1});
    store.at("i.kernel").value[4] = 1.0;
    std::mt19937_64 rng(1);
    Tensor in = gradcases::random_tensor(rng, {2, 1, 4, 5});
    CHECK(ident.forward(in) == in);
    const Tensor before = in;
    ident.forward(in);
    CHECK(in == before);  // inputs are not mutated
    CHECK_THROWS_AS(ident.forward(Tensor({1, 2, 4, 5})), ShapeError);
    Conv2d big(store, "b", 1, 1, 5, 5, {0, 0});
    CHECK_THROWS_AS(big.forward(Tensor({1, 1, 3, 3})), ShapeError);
  }

  TEST_CASE("max-pool fixtures") {
    MaxPoolRows pool(8);
    Tensor c({1, 1, 8, 3}, 4.0);
    auto out = pool.forward(c);
    CHECK(out.shape() == Shape{1, 1, 1, 3});
    for (double v : out.values()) CHECK(v == 4.0);
    // ties route the gradient to the lowest index
    auto g = pool.backward(Tensor({1, 1, 1, 3}, 1.0));
    CHECK(g[0] == 1.0);
    CHECK(g[3] == 0.0);

    Tensor inc({1, 1, 10, 1});
    for (std::size_t i = 0; i < 10; ++i) inc[i] = static_cast<double>(i);
    auto o = pool.forward(inc);
    REQUIRE(o.size() == 3);
    CHECK(o[0] == 7.0);
    CHECK(o[1] == 8.0);
    CHECK(o[2] == 9.0);
    CHECK_THROWS_AS(pool.forward(Tensor({1, 1, 7, 2})), ShapeError);
  }

  TEST_CASE("GRU zero fixed point") {
    ParameterStore store;
    Gru gru(store, "g", 3, 4);
    std::mt19937_64 rng(2);
    auto out = gru.forward(gradcases::random_tensor(rng, {2, 6, 3}));
    for (double v : out.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(gru.forward(Tensor({1, 2, 5})), ShapeError);
  }

  TEST_CASE("GRU closed form for scalar dimensions") {
    ParameterStore store;
    Gru gru(store, "g", 1, 1);
    auto set = [&](const char* n, double v) { store.at(std::string("g.") + n).value[0] = v; };
    set("W_z", 0.5), set("U_z", -0.3), set("b_z", 0.1);
    set("W_r", -0.4), set("U_r", 0.7), set("b_r", 0.2);
    set("W_h", 0.8), set("U_h", 0.6), set("b_h", -0.2);
    Tensor x({1, 2, 1}, std::vector<double>{2.0, -1.0});
    auto out = gru.forward(x);
    // step 1 from h0 = 0
    const double z1 = sigmoid(0.5 * 2 + 0.1);
    const double c1 = std::tanh(0.8 * 2 - 0.2);
    const double h1 = z1 * c1;
    CHECK(out[0] == doctest::Approx(h1).epsilon(1e-14));
    // step 2
    const double z2 = sigmoid(0.5 * -1 - 0.3 * h1 + 0.1);
    const double r2 = sigmoid(-0.4 * -1 + 0.7 * h1 + 0.2);
    const double c2 = std::tanh(0.8 * -1 + 0.6 * (r2 * h1) - 0.2);
    CHECK(out[1] == doctest::Approx((1 - z2) * h1 + z2 * c2).epsilon(1e-14));
  }

  TEST_CASE("dense fixtures") {
    ParameterStore store;
    Dense zero(store, "z", 3, 2, Activation::Sigmoid);
    auto o = zero.forward(Tensor({2, 3}, 5.0));
    for (double v : o.values()) CHECK(v == 0.5);
    Dense id(store, "i", 3, 3, Activation::None);
    for (std::size_t k = 0; k < 3; ++k) store.at("i.weight").value[k * 3 + k] = 1.0;
    Tensor in({1, 3}, std::vector<double>{1, -2, 3});
    CHECK(id.forward(in) == in);
    CHECK_THROWS_AS(id.forward(Tensor({1, 4})), ShapeError);
  }

  TEST_CASE("batch-norm fixtures") {
    ParameterStore store;
    BatchNorm bn(store, "bn", 2);
    store.at("bn.beta").value = Tensor({2}, std::vector<double>{0.5, -1.0});
    auto flat = bn.forward(Tensor({4, 2}, 3.0), Mode::Train);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(flat[2 * i] == 0.5);
      CHECK(flat[2 * i + 1] == -1.0);
    }
    ParameterStore s2;
    BatchNorm id(s2, "bn", 1);
    Tensor std_in({4, 1}, std::vector<double>{-1, -1, 1, 1});  // mean 0, variance 1
    auto o = id.forward(std_in, Mode::Train);
    for (std::size_t i = 0; i < 4; ++i) CHECK(o[i] == doctest::Approx(std_in[i]).epsilon(1e-5));
    CHECK(s2.at("bn.running_mean").value[0] == 0.0);
    CHECK(s2.at("bn.running_var").value[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(id.forward(Tensor({1, 1}), Mode::Train), ShapeError);
    CHECK_NOTHROW(id.forward(Tensor({1, 1}), Mode::Infer));
  }

  TEST_CASE("batch-norm running statistics use momentum 0.99") {
    ParameterStore store;
    BatchNorm bn(store, "bn", 1);
    bn.forward(Tensor({2, 1}, std::vector<double>{1.0, 3.0}), Mode::Train);
    CHECK(store.at("bn.running_mean").value[0] == doctest::Approx(0.01 * 2.0));
    CHECK(store.at("bn.running_var").value[0] == doctest::Approx(0.99 + 0.01 * 1.0));
    auto o = bn.forward(Tensor({1, 1}, 2.0), Mode::Infer);
    CHECK(o[0] == doctest::Approx((2.0 - 0.02) / std::sqrt(1.0 + 1e-5)));
  }

  TEST_CASE("batch-norm running statistics can be replaced") {
    ParameterStore store;
    BatchNorm bn(store, "bn", 2);
    bn.set_running_statistics({1.0, -2.0}, {4.0, 0.25});
    auto o = bn.forward(Tensor({1, 2}, std::vector<double>{3.0, -1.0}), Mode::Infer);
    CHECK(o[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
    CHECK(o[1] == doctest::Approx(1.0 / std::sqrt(0.25 + 1e-5)));
    CHECK_THROWS_AS(bn.set_running_statistics({0.0}, {1.0}), ShapeError);
    CHECK_THROWS_AS(bn.set_running_statistics({0.0, 0.0}, {1.0, -1.0}), NumericError);
  }

  TEST_CASE("dropout") {
    std::mt19937_64 rng(3);
    Tensor in = gradcases::random_tensor(rng, {100, 100});
    Dropout none(0.0);
    CHECK(none.forward(in, Mode::Train, 1) == in);
    Dropout half(0.5);
    CHECK(half.forward(in, Mode::Infer, 1) == in);
    auto a = half.forward(in, Mode::Train, 42);
    const auto mask = half.mask();
    auto b = half.forward(in, Mode::Train, 42);
    CHECK(a == b);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (a[i] != 0.0) {
        ++kept;
        CHECK(a[i] == doctest::Approx(2.0 * in[i]));
      }
    }
    const double n = 1e4, sigma = std::sqrt(n * 0.25);
    CHECK(std::abs(static_cast<double>(kept) - 0.5 * n) < 3 * sigma);
    CHECK(half.forward(in, Mode::Train, 43) != a);
    CHECK_THROWS_AS(Dropout(1.0), UsageError);
    CHECK_THROWS_AS(Dropout(-0.1), UsageError);
  }

  TEST_CASE("dropout with a mask shared along one axis") {
    std::mt19937_64 rng(6);
    const auto in = gradcases::random_tensor(rng, {4, 50, 6}, 1.0);
    Dropout d(0.5);
    CHECK(d.forward_shared(in, 1, Mode::Infer, 3) == in);
    const auto out = d.forward_shared(in, 1, Mode::Train, 3);
    const auto& mask = d.mask();
    std::size_t kept = 0;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t k = 0; k < 6; ++k) {
        const double m = mask[(s * 50) * 6 + k];
        CHECK((m == 0.0 || m == 2.0));
        kept += m != 0.0;
        for (std::size_t t = 0; t < 50; ++t) {
          const std::size_t i = (s * 50 + t) * 6 + k;
          CHECK(mask[i] == m);
          CHECK(out[i] == in[i] * m);
        }
      }
    CHECK(kept > 0);
    CHECK(kept < 24);
    // the last axis of a 4-D map
    const auto img = gradcases::random_tensor(rng, {2, 3, 2, 7}, 1.0);
    d.forward_shared(img, 3, Mode::Train, 9);
    for (std::size_t o = 0; o < 12; ++o)
      for (std::size_t t = 1; t < 7; ++t) CHECK(d.mask()[o * 7 + t] == d.mask()[o * 7]);
    const auto g = d.backward(Tensor(img.shape(), 1.0));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == d.mask()[i]);
    CHECK_THROWS_AS(d.forward_shared(img, 4, Mode::Train, 1), ShapeError);
  }

  TEST_CASE("softmax and cross-entropy fixtures") {
    auto r = softmax_cross_entropy(Tensor({2, 4}, 0.3), {0, 3});
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(r.grad[0] == doctest::Approx((0.25 - 1.0) / 2));
    CHECK(r.grad[1] == doctest::Approx(0.25 / 2));
    Tensor big({1, 3}, std::vector<double>{1000, 0, -1000});
    CHECK(softmax_cross_entropy(big, {0}).loss < 1e-12);
    std::mt19937_64 rng(4);
    auto sm = softmax(gradcases::random_tensor(rng, {5, 7}, 30.0));
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += sm[i * 7 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 3}), {3}), DataError);
  }

  TEST_CASE("finite-difference checks per layer") {
    CHECK(gradcases::conv2d().max_rel_error < 1e-6);
    CHECK(gradcases::maxpool().max_rel_error < 1e-6);
    CHECK(gradcases::gru().max_rel_error < 1e-5);
    CHECK(gradcases::dense(Activation::Sigmoid).max_rel_error < 1e-6);
    CHECK(gradcases::dense(Activation::None).max_rel_error < 1e-6);
    CHECK(gradcases::batchnorm().max_rel_error < 1e-5);
    CHECK(gradcases::softmax_ce().max_rel_error < 1e-5);
  }

  TEST_CASE("gradient checker on closed-form functions") {
    ParameterStore store;
    auto& w = store.add("w", Tensor({1}, 3.0));
    auto quad = [&] {
      w.grad[0] += 2 * w.value[0];
      return w.value[0] * w.value[0];
    };
    auto r = gradient_check(quad, store);
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.checked == 1);
    CHECK(w.grad[0] == 6.0);

    ParameterStore lin;
    auto& a = lin.add("a", Tensor({3}, std::vector<double>{1, 2, 3}));
    auto linear = [&] {
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        s += (i + 1.0) * a.value[i];
        a.grad[i] += i + 1.0;
      }
      return s;
    };
    CHECK(gradient_check(linear, lin).max_rel_error < 1e-8);

    // wrong analytic gradient is detected
    auto wrong = [&] {
      w.grad[0] += 1.0;
      return w.value[0] * w.value[0];
    };
    CHECK(gradient_check(wrong, store).max_rel_error > 0.5);
    auto inf = [&] { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(gradient_check(inf, store), NumericError);
  }

  TEST_CASE("rmsprop update rule") {
    ParameterStore store;
    auto& w = store.add("w", Tensor({1}, 1.0));
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.rho = 0.9;
    cfg.momentum = 0.0;
    cfg.epsilon = 1e-6;
    w.grad[0] = 1.0;
    rmsprop_step(store, cfg);
    CHECK(w.value[0] == doctest::Approx(1.0 - 0.1 / std::sqrt(0.100001)).epsilon(1e-14));
    CHECK(w.value[0] == doctest::Approx(0.68377).epsilon(1e-5));

    ParameterStore s2;
    auto& m = s2.add("m", Tensor({1}, 0.0));
    cfg.momentum = 0.9;
    m.grad[0] = 1.0;
    rmsprop_step(s2, cfg);
    const double v1 = 0.1 / std::sqrt(0.1 + 1e-6);
    rmsprop_step(s2, cfg);
    const double v2 = 0.9 * v1 + 0.1 / std::sqrt(0.19 + 1e-6);
    CHECK(m.value[0] == doctest::Approx(-(v1 + v2)).epsilon(1e-14));
    CHECK(v2 > 0.1);

    ParameterStore s3;
    auto& z = s3.add("z", Tensor({4}, 2.0));
    auto& frozen = s3.add("f", Tensor({1}, 5.0), false);
    frozen.grad[0] = 10.0;
    rmsprop_step(s3, OptimizerConfig{});
    for (double v : z.value.values()) CHECK(v == 2.0);
    CHECK(frozen.value[0] == 5.0);

    OptimizerConfig bad;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
  }

  TEST_CASE("checkpoint round trip verifies names and shapes") {
    std::mt19937_64 rng(5);
    ParameterStore a;
    a.add("x", gradcases::random_tensor(rng, {2, 3}));
    a.add("y", gradcases::random_tensor(rng, {4}), false);
    std::stringstream buf;
    save_checkpoint(buf, a);
    CHECK(buf.str().substr(0, 4) == "DPNN");
    ParameterStore b;
    b.add("x", Tensor({2, 3}));
    b.add("y", Tensor({4}), false);
    load_checkpoint(buf, b);
    CHECK(b.at("x").value == a.at("x").value);
    CHECK(b.at("y").value == a.at("y").value);

    std::stringstream buf2;
    save_checkpoint(buf2, a);
    ParameterStore c;
    c.add("x", Tensor({3, 2}));
    c.add("y", Tensor({4}), false);
    CHECK_THROWS_AS(load_checkpoint(buf2, c), ShapeError);
    std::stringstream junk("NOPE");
    CHECK_THROWS_AS(load_checkpoint(junk, b), DataError);
  }
}
