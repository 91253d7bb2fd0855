#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "hsbnn/autodiff.hpp"
#include "hsbnn/rng.hpp"
#include "hsbnn/tensor.hpp"

using namespace hsbnn;

TEST_CASE("tensor shape and access") {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  REQUIRE(m.rank() == 2);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 3);
  REQUIRE(m(1, 2) == 6.0);
  REQUIRE(m[3] == 4.0);

  Tensor s = Tensor::scalar(2.5);
  REQUIRE(s.rank() == 0);
  REQUIRE(s.item() == 2.5);

  Tensor v = Tensor::vector({1, 2, 3});
  REQUIRE(v.rank() == 1);
  REQUIRE_THROWS_AS(v.item(), ContractError);
  REQUIRE_THROWS_AS(Tensor({2, -1}), DimensionError);
  REQUIRE_THROWS_AS(Tensor::matrix(2, 2, {1, 2, 3}), DimensionError);
}

TEST_CASE("tensor finiteness check") {
  Tensor t = Tensor::vector({1.0, 2.0});
  REQUIRE(t.all_finite());
  t[1] = std::nan("");
  REQUIRE_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("elementwise forward values") {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({1.0, -2.0, 3.0}), true);
  Var b = tape.leaf(Tensor::vector({4.0, 5.0, -6.0}), true);
  REQUIRE(tape.value(a + b)[1] == 3.0);
  REQUIRE(tape.value(a * b)[2] == -18.0);
  REQUIRE(tape.value(a - b)[0] == -3.0);
  REQUIRE(tape.value(a / b)[1] == -0.4);
  REQUIRE(tape.value(a * 2.0)[0] == 2.0);
  REQUIRE(tape.value(1.0 + a)[0] == 2.0);

  Var c = tape.leaf(Tensor::scalar(10.0), true);
  Tensor bc = tape.value(a * c);
  REQUIRE(bc.same_shape(Tensor::vector({0, 0, 0})));
  REQUIRE(bc[2] == 30.0);

  Var d = tape.leaf(Tensor::vector({1.0, 2.0}), false);
  REQUIRE_THROWS_AS(a + d, DimensionError);
}

TEST_CASE("scalar broadcast backward reduces over the output") {
  Tape tape;
  Var s = tape.leaf(Tensor::scalar(3.0), true);
  Var v = tape.leaf(Tensor::vector({1.0, 2.0, 4.0}), true);
  Var out = sum(v * s);
  tape.backward(out);
  REQUIRE(tape.adjoint(s).item() == Catch::Approx(7.0));
  REQUIRE(tape.adjoint(v)[2] == Catch::Approx(3.0));
}

TEST_CASE("matmul gradients match finite differences") {
  RngStream rng(914001);
  Tensor a0 = rng.normal_tensor({3, 4});
  Tensor b0 = rng.normal_tensor({4, 2});
  Tensor w = rng.normal_tensor({3, 2});  // fixed projection to make a scalar

  auto loss = [&](const std::vector<double>& flat) {
    Tape tape;
    Tensor at({3, 4}, std::vector<double>(flat.begin(), flat.begin() + 12));
    Tensor bt({4, 2}, std::vector<double>(flat.begin() + 12, flat.end()));
    Var a = tape.leaf(at, true);
    Var b = tape.leaf(bt, true);
    Var prod = matmul(a, b);
    Var weighted = prod * tape.constant(w);
    return tape.value(sum(weighted)).item();
  };

  std::vector<double> flat;
  flat.insert(flat.end(), a0.storage().begin(), a0.storage().end());
  flat.insert(flat.end(), b0.storage().begin(), b0.storage().end());
  std::vector<double> fd = testutil::fd_gradient(loss, flat);

  Tape tape;
  Var a = tape.leaf(a0, true);
  Var b = tape.leaf(b0, true);
  tape.backward(sum(matmul(a, b) * tape.constant(w)));
  std::vector<double> got;
  got.insert(got.end(), tape.adjoint(a).storage().begin(), tape.adjoint(a).storage().end());
  got.insert(got.end(), tape.adjoint(b).storage().begin(), tape.adjoint(b).storage().end());

  REQUIRE(testutil::max_grad_rel_err(got, fd) < 1e-6);
}

TEST_CASE("two layer mlp gradients match finite differences") {
  // x -> relu(x W1 + b1) -> W2 + b2 -> mean of squares
  RngStream rng(914002);
  const int64_t n = 5, din = 3, dh = 4, dout = 2;
  Tensor x = rng.normal_tensor({n, din});
  Tensor w1 = rng.normal_tensor({din, dh}, 0.0, 0.7);
  Tensor b1 = rng.normal_tensor({dh});
  Tensor w2 = rng.normal_tensor({dh, dout}, 0.0, 0.7);
  Tensor b2 = rng.normal_tensor({dout});

  auto unpack = [&](const std::vector<double>& flat) {
    size_t o = 0;
    auto take = [&](std::vector<int64_t> shape) {
      int64_t sz = 1;
      for (int64_t d : shape) sz *= d;
      Tensor t(shape, std::vector<double>(flat.begin() + o, flat.begin() + o + sz));
      o += static_cast<size_t>(sz);
      return t;
    };
    Tensor tw1 = take({din, dh});
    Tensor tb1 = take({dh});
    Tensor tw2 = take({dh, dout});
    Tensor tb2 = take({dout});
    return std::tuple{tw1, tb1, tw2, tb2};
  };

  auto loss = [&](const std::vector<double>& flat) {
    auto [tw1, tb1, tw2, tb2] = unpack(flat);
    Tape tape;
    Var h = relu(add_rowvec(matmul(tape.constant(x), tape.leaf(tw1, true)), tape.leaf(tb1, true)));
    Var out = add_rowvec(matmul(h, tape.leaf(tw2, true)), tape.leaf(tb2, true));
    return tape.value(mean(square(out))).item();
  };

  std::vector<double> flat;
  for (const Tensor* t : {&w1, &b1, &w2, &b2}) {
    flat.insert(flat.end(), t->storage().begin(), t->storage().end());
  }
  std::vector<double> fd = testutil::fd_gradient(loss, flat);

  Tape tape;
  Var vw1 = tape.leaf(w1, true);
  Var vb1 = tape.leaf(b1, true);
  Var vw2 = tape.leaf(w2, true);
  Var vb2 = tape.leaf(b2, true);
  Var h = relu(add_rowvec(matmul(tape.constant(x), vw1), vb1));
  Var out = add_rowvec(matmul(h, vw2), vb2);
  tape.backward(mean(square(out)));

  std::vector<double> got;
  for (Var v : {vw1, vb1, vw2, vb2}) {
    got.insert(got.end(), tape.adjoint(v).storage().begin(), tape.adjoint(v).storage().end());
  }
  REQUIRE(testutil::max_grad_rel_err(got, fd) < 1e-4);
}

TEST_CASE("unary chain gradients match finite differences") {
  auto loss = [](const std::vector<double>& flat) {
    Tape tape;
    Var x = tape.leaf(Tensor::vector(flat), true);
    Var y = sum(softplus(x) * exp(-square(x)) + log(softplus(x) + 1.0) + sqrt(square(x) + 1.0));
    return tape.value(y).item();
  };
  std::vector<double> x0 = {0.3, -1.2, 2.0, 0.01};
  std::vector<double> fd = testutil::fd_gradient(loss, x0);

  Tape tape;
  Var x = tape.leaf(Tensor::vector(x0), true);
  tape.backward(sum(softplus(x) * exp(-square(x)) + log(softplus(x) + 1.0) +
                    sqrt(square(x) + 1.0)));
  const Tensor& g = tape.adjoint(x);
  REQUIRE(testutil::max_grad_rel_err({g[0], g[1], g[2], g[3]}, fd) < 1e-6);
}

TEST_CASE("shared subexpression accumulates both paths") {
  // y = s*s + 3*s with s = sum(x): dy/dx_i = 2*s + 3
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}), true);
  Var s = sum(x);
  Var y = s * s + 3.0 * s;
  tape.backward(y);
  REQUIRE(tape.adjoint(x)[0] == Catch::Approx(9.0));
  REQUIRE(tape.adjoint(x)[1] == Catch::Approx(9.0));
}

TEST_CASE("leaves off the path get exact zero adjoints") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}), true);
  Var unused = tape.leaf(Tensor::vector({5.0, 6.0}), true);
  tape.backward(sum(x));
  REQUIRE(tape.adjoint(unused)[0] == 0.0);
  REQUIRE(tape.adjoint(unused)[1] == 0.0);
  REQUIRE(tape.adjoint(x)[0] == 1.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}), true);
  REQUIRE_THROWS_AS(tape.backward(x + x), ContractError);
}

TEST_CASE("logsumexp is overflow safe and has softmax gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 3, {1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0}), true);
  Var l = logsumexp(x);
  const Tensor& lv = tape.value(l);
  REQUIRE(std::isfinite(lv[0]));
  REQUIRE(lv[0] == Catch::Approx(1002.0 + std::log(std::exp(-2.0) + std::exp(-1.0) + 1.0)));

  tape.backward(sum(l));
  const Tensor& g = tape.adjoint(x);
  REQUIRE(g(0, 0) + g(0, 1) + g(0, 2) == Catch::Approx(1.0));
  REQUIRE(g(0, 2) == Catch::Approx(std::exp(-0.0) / (std::exp(-2.0) + std::exp(-1.0) + 1.0)));
  REQUIRE(g(1, 2) > g(1, 0));
}

TEST_CASE("logsumexp on a vector yields a scalar") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0, std::log(3.0)}), true);
  Var l = logsumexp(x);
  REQUIRE(tape.value(l).item() == Catch::Approx(std::log(4.0)));
  tape.backward(l);
  REQUIRE(tape.adjoint(x)[1] == Catch::Approx(0.75));
}

TEST_CASE("pick_cols selects and scatters") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}), true);
  Var p = pick_columns(x, {2, 0});
  REQUIRE(tape.value(p)[0] == 3.0);
  REQUIRE(tape.value(p)[1] == 4.0);
  tape.backward(sum(p * tape.constant(Tensor::vector({10.0, 20.0}))));
  const Tensor& g = tape.adjoint(x);
  REQUIRE(g(0, 2) == 10.0);
  REQUIRE(g(1, 0) == 20.0);
  REQUIRE(g(0, 0) == 0.0);
  REQUIRE_THROWS_AS(pick_columns(x, {0, 3}), DomainError);
  REQUIRE_THROWS_AS(pick_columns(x, {0}), DimensionError);
}

TEST_CASE("append_ones adds a bias column and drops its gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}), true);
  Var y = append_ones_column(x);
  REQUIRE(tape.value(y).cols() == 3);
  REQUIRE(tape.value(y)(0, 2) == 1.0);
  REQUIRE(tape.value(y)(1, 1) == 4.0);
  tape.backward(sum(y));
  REQUIRE(tape.adjoint(x)(0, 0) == 1.0);
  REQUIRE(tape.adjoint(x).same_shape(tape.value(x)));
}

TEST_CASE("relu and softplus gradient conventions at zero") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0}), true);
  tape.backward(sum(relu(x)));
  REQUIRE(tape.adjoint(x)[0] == 0.0);

  Tape tape2;
  Var x2 = tape2.leaf(Tensor::vector({0.0}), true);
  tape2.backward(sum(softplus(x2)));
  REQUIRE(tape2.adjoint(x2)[0] == Catch::Approx(0.5));
}

TEST_CASE("digamma and lgamma ops differentiate correctly") {
  auto loss = [](const std::vector<double>& flat) {
    Tape tape;
    Var x = tape.leaf(Tensor::vector(flat), true);
    return tape.value(sum(lgamma(x) + digamma(x))).item();
  };
  std::vector<double> x0 = {0.7, 1.5, 6.0};
  std::vector<double> fd = testutil::fd_gradient(loss, x0, 1e-6);

  Tape tape;
  Var x = tape.leaf(Tensor::vector(x0), true);
  tape.backward(sum(lgamma(x) + digamma(x)));
  const Tensor& g = tape.adjoint(x);
  REQUIRE(testutil::max_grad_rel_err({g[0], g[1], g[2]}, fd, 1e-6) < 1e-5);
}

TEST_CASE("vars from different tapes are rejected") {
  Tape t1, t2;
  Var a = t1.leaf(Tensor::scalar(1.0), true);
  Var b = t2.leaf(Tensor::scalar(2.0), true);
  REQUIRE_THROWS_AS(a + b, ContractError);
}

TEST_CASE("domain violations in log and sqrt throw") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1.0}), true);
  REQUIRE_THROWS_AS(log(x), DomainError);
  REQUIRE_THROWS_AS(sqrt(x), DomainError);
}
