#include <cmath>

#include "atm/errors.hpp"
#include "atm/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using atm::Tensor;

TEST_CASE("matmul values and shapes") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor v = Tensor::from_rows({{3}, {4}});
  const Tensor r = atm::matmul(id, v);
  CHECK(r.rows() == 2);
  CHECK(r.cols() == 1);
  CHECK(r(0, 0) == 3);
  CHECK(r(1, 0) == 4);

  CHECK(atm::matmul(Tensor::row({1, 2}), v).item() == 11);

  try {
    atm::matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3));
    FAIL("expected dimension error");
  } catch (const atm::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match central differences") {
  atm::Rng rng(11);
  Tensor a = oracle::random_tensor(rng, 3, 4, -2, 2, true);
  Tensor b = oracle::random_tensor(rng, 4, 2, -2, 2, true);
  Tensor w = oracle::random_tensor(rng, 3, 2);
  auto loss = [&] { return atm::sum(atm::mul(atm::matmul(a, b), w)); };
  atm::backward(loss());
  const auto fa = oracle::central_difference([&] { return loss().item(); }, a);
  const auto fb = oracle::central_difference([&] { return loss().item(); }, b);
  CHECK(oracle::max_rel_error(a.grad(), fa) <= 1e-6);
  CHECK(oracle::max_rel_error(b.grad(), fb) <= 1e-6);
}

TEST_CASE("elementwise definitions") {
  const Tensor r = atm::relu(Tensor::row({-1, 0, 2}));
  CHECK(r(0, 0) == 0);
  CHECK(r(0, 1) == 0);
  CHECK(r(0, 2) == 2);
  CHECK(atm::sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(atm::sigmoid(Tensor::scalar(-800)).item() >= 0.0);

  Tensor x = Tensor::row({3}, true);
  atm::backward(atm::square(x));
  CHECK(x.grad()[0] == 6);

  CHECK(atm::elementwise(atm::ElementwiseOp::exp, Tensor::scalar(0)).item() == 1);
  CHECK_THROWS_AS(atm::add(Tensor::zeros(2, 2), Tensor::zeros(3, 3)), atm::DimensionError);
}

TEST_CASE("log clamps non-positive inputs") {
  CHECK(atm::log(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(1e-12)));
  CHECK_THROWS_AS(atm::log(Tensor::scalar(1.0), 0.0), atm::NumericError);
  Tensor x = Tensor::row({0.0, 2.0}, true);
  atm::backward(atm::sum(atm::log(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.5);
}

TEST_CASE("broadcast bias add") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor bias = Tensor::row({10, 20}, true);
  const Tensor r = atm::add(a, bias);
  CHECK(r(1, 1) == 24);
  atm::backward(atm::sum(r));
  CHECK(bias.grad()[0] == 2);
  CHECK(bias.grad()[1] == 2);

  Tensor col(2, 1, {2, 3}, true);
  const Tensor m = atm::mul(a, col);
  CHECK(m(1, 0) == 9);
  atm::backward(atm::sum(m));
  CHECK(col.grad()[0] == 3);
  CHECK(col.grad()[1] == 7);
}

TEST_CASE("softmax rows") {
  const Tensor u = atm::softmax_rows(Tensor::row({0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = atm::softmax_rows(Tensor::row({1000, 0}));
  CHECK(big(0, 0) == doctest::Approx(1.0));
  CHECK(big(0, 1) < 1e-300);

  atm::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor(rng, 4, 5);
    const Tensor s = atm::softmax_rows(x);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (std::size_t j = 0; j < 5; ++j) shifted[5 + j] += 7.25;
    const Tensor s2 = atm::softmax_rows(Tensor(4, 5, shifted));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        total += s(i, j);
        CHECK(std::abs(s(i, j) - s2(i, j)) <= 1e-12);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  // Jacobian: each output coordinate weighted by a random vector.
  Tensor x = oracle::random_tensor(rng, 4, 5, -2, 2, true);
  const Tensor w = oracle::random_tensor(rng, 4, 5);
  auto loss = [&] { return atm::sum(atm::mul(atm::softmax_rows(x), w)); };
  atm::backward(loss());
  const auto fd = oracle::central_difference([&] { return loss().item(); }, x);
  CHECK(oracle::max_rel_error(x.grad(), fd) <= 1e-6);
}

TEST_CASE("reductions and shape ops") {
  CHECK(atm::mean(Tensor::row({2, 4})).item() == 3);
  Tensor w = Tensor::row({2, 4}, true);
  atm::backward(atm::mean(w));
  CHECK(w.grad()[0] == 0.5);
  CHECK(w.grad()[1] == 0.5);
  CHECK_THROWS_AS(atm::mean(Tensor::zeros(0, 0)), atm::EmptyReductionError);

  const Tensor c = atm::concat_cols(Tensor::zeros(2, 3), Tensor::zeros(2, 2));
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 5);
  const Tensor t = atm::transpose(Tensor::from_rows({{1, 2, 3}}));
  CHECK(t.rows() == 3);
  CHECK(t(2, 0) == 3);
  const Tensor s = atm::sum_rows(Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(s(1, 0) == 7);
}

TEST_CASE("shape ops gradients") {
  atm::Rng rng(21);
  Tensor a = oracle::random_tensor(rng, 3, 2, -2, 2, true);
  Tensor b = oracle::random_tensor(rng, 3, 3, -2, 2, true);
  const Tensor w = oracle::random_tensor(rng, 4, 2);
  const std::vector<std::size_t> rows{2, 0, 2, 1};
  const std::vector<std::size_t> cols{1, 4, 0, 3};
  auto loss = [&] {
    const Tensor c = atm::concat_cols(a, b);
    const Tensor g = atm::select_rows(atm::square(c), rows);
    const Tensor p = atm::pick(g, cols);
    const Tensor tr = atm::transpose(atm::concat_rows(a, a));
    return atm::add(atm::sum(atm::mul(p, atm::sum_rows(g))), atm::mean(atm::matmul(w, tr)));
  };
  atm::backward(loss());
  const auto fa = oracle::central_difference([&] { return loss().item(); }, a);
  const auto fb = oracle::central_difference([&] { return loss().item(); }, b);
  CHECK(oracle::max_rel_error(a.grad(), fa) <= 1e-5);
  CHECK(oracle::max_rel_error(b.grad(), fb) <= 1e-5);
}

TEST_CASE("randomized gradient agreement for every differentiable op") {
  atm::Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = oracle::random_tensor(rng, 3, 4, -2, 2, true);
    Tensor y = oracle::random_tensor(rng, 3, 4, -2, 2, true);
    Tensor bias = oracle::random_tensor(rng, 1, 4, -2, 2, true);
    auto loss = [&] {
      Tensor h = atm::add(atm::mul(x, y), bias);
      h = atm::sub(atm::sigmoid(h), atm::scale(atm::relu(y), 0.3));
      h = atm::add(h, atm::exp(atm::scale(x, 0.5)));
      h = atm::add(h, atm::log(atm::add_scalar(atm::square(y), 0.5)));
      h = atm::softmax_rows(h);
      return atm::mean(atm::mul(h, x));
    };
    atm::backward(loss());
    for (Tensor* p : {&x, &y, &bias}) {
      const auto fd = oracle::central_difference([&] { return loss().item(); }, *p);
      CHECK(oracle::max_rel_error(p->grad(), fd) <= 1e-5);
    }
  }
}

TEST_CASE("backward contracts") {
  Tensor w = Tensor::row({1, 2}, true);
  const Tensor loss = atm::mean(atm::square(w));
  atm::backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(1.0));
  CHECK(w.grad()[1] == doctest::Approx(2.0));
  atm::backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);

  CHECK_THROWS_AS(atm::backward(atm::square(w)), atm::RankError);
}

TEST_CASE("tape visits each record once in creation order") {
  Tensor w = Tensor::row({1, 2}, true);
  const Tensor h = atm::square(w);
  const Tensor loss = atm::add(atm::sum(h), atm::mean(h));
  const atm::Tape tape = atm::Tape::record(loss);
  CHECK(tape.size() == 5);  // w, square, sum, mean, add
  const auto recs = tape.records();
  for (std::size_t i = 1; i < recs.size(); ++i) CHECK(recs[i - 1]->seq < recs[i]->seq);
  atm::backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2.0 + 1.0));
}

TEST_CASE("backward is deterministic") {
  atm::Rng rng(3);
  const Tensor x0 = oracle::random_tensor(rng, 5, 3);
  const Tensor m0 = oracle::random_tensor(rng, 3, 3);
  std::vector<double> first;
  for (int rep = 0; rep < 2; ++rep) {
    Tensor m(3, 3, std::vector<double>(m0.data().begin(), m0.data().end()), true);
    atm::backward(atm::mean(atm::softmax_rows(atm::matmul(x0, m))));
    std::vector<double> g(m.grad().begin(), m.grad().end());
    if (rep == 0) first = g;
    else CHECK(first == g);
  }
}

TEST_CASE("gradient reversal") {
  const Tensor f = atm::gradient_reversal(Tensor::row({1, 2}), 1.0);
  CHECK(f(0, 0) == 1);
  CHECK(f(0, 1) == 2);
  Tensor x = Tensor::row({1, 2}, true);
  const Tensor g = Tensor::row({0.5, -3});
  atm::backward(atm::sum(atm::mul(atm::gradient_reversal(x, 1.0), g)));
  CHECK(x.grad()[0] == -0.5);
  CHECK(x.grad()[1] == 3);
  x.zero_grad();
  atm::backward(atm::sum(atm::mul(atm::gradient_reversal(x, 0.0), g)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("grad_check") {
  auto sumsq = [](const Tensor& x) { return atm::sum(atm::square(x)); };
  CHECK(atm::grad_check(sumsq, Tensor::row({1, 2, 3}), 1e-6) <= 1e-8);
  auto linear = [](const Tensor& x) { return atm::sum(atm::scale(x, 3.0)); };
  CHECK(atm::grad_check(linear, Tensor::row({1, -2, 5}), 1e-6) <= 1e-9);
  auto chain = [](const Tensor& x) { return atm::sum(atm::sigmoid(atm::sigmoid(x))); };
  CHECK(atm::grad_check(chain, Tensor::row({0.0}), 1e-6) <= 1e-6);
  CHECK_THROWS_AS(atm::grad_check(sumsq, Tensor::row({1}), 0.0), std::invalid_argument);
  auto blowup = [](const Tensor& x) { return atm::sum(atm::exp(atm::scale(x, 1e3))); };
  CHECK_THROWS_AS(atm::grad_check(blowup, Tensor::row({1}), 1e-6), atm::NumericError);
}
