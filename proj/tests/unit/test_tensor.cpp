#include <cmath>

#include "doctest.h"
#include "shapedet/tensor.hpp"
#include "grad_cases.hpp"
#include "support.hpp"

using namespace shapedet;
using namespace testing_support;

TEST_CASE("linear forward on hand examples") {
  Tape t;
  Var y = t.linear(t.constant(Tensor::row({1, 0})), t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
                   t.constant(Tensor::row({0, 0})));
  CHECK(t.value(y) == Tensor::row({1, 0}));
  Var z = t.linear(t.constant(Tensor::row({2, 3})), t.constant(Tensor::matrix(2, 2, {1, 1, 0, 1})),
                   t.constant(Tensor::row({0.5, 0})));
  CHECK(t.value(z) == Tensor::row({5.5, 3}));
}

TEST_CASE("linear without bias is linear") {
  Rng rng(3);
  for (std::size_t n : {3u, 20u}) {
    const Tensor w = random_tensor(5, 4, rng), b({1, 5}, 0.0);
    const Tensor x = random_tensor(n, 4, rng), y = random_tensor(n, 4, rng);
    Tensor mix({n, 4});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * y[i];
    const Tensor lx = linear_forward(x, w, b), ly = linear_forward(y, w, b), lm = linear_forward(mix, w, b);
    for (std::size_t i = 0; i < lm.size(); ++i) CHECK(lm[i] == doctest::Approx(2.0 * lx[i] - 0.5 * ly[i]).epsilon(1e-12));
  }
}

TEST_CASE("activations") {
  Tape t;
  Var r = t.relu(t.constant(Tensor::row({-1, 2})));
  CHECK(t.value(r) == Tensor::row({0, 2}));
  Var s = t.sigmoid(t.constant(Tensor::row({0, 2})));
  CHECK(t.value(s)[0] == 0.5);
  CHECK(t.value(s)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
}

TEST_CASE("pooling, concat and repeat shapes") {
  Tape t;
  Var m = t.set_max_pool(t.constant(Tensor::matrix(2, 2, {1, 5, 3, 2})));
  CHECK(t.value(m) == Tensor::row({3, 5}));
  Var one = t.set_max_pool(t.constant(Tensor::row({4, -1})));
  CHECK(t.value(one) == Tensor::row({4, -1}));
  Var e = t.expand_rows(t.constant(Tensor::row({1, 2})), 3);
  CHECK(t.value(e) == Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2}));
  Var c = t.concat(t.constant(Tensor({4, 2}, 1.0)), t.constant(Tensor({4, 3}, 2.0)));
  CHECK(t.value(c).shape() == std::vector<std::size_t>{4, 5});
  Var g = t.group_max_pool(t.constant(Tensor::matrix(4, 1, {1, 3, 2, 0})), 2);
  CHECK(t.value(g) == Tensor::matrix(2, 1, {3, 2}));
  Var rm = t.row_max_pool(t.constant(Tensor::matrix(2, 3, {1, 4, 2, 0, -1, -3})));
  CHECK(t.value(rm) == Tensor::matrix(2, 1, {4, 0}));
  CHECK_THROWS_AS(t.concat(t.constant(Tensor({2, 2})), t.constant(Tensor({3, 2}))), ShapeError);
}

TEST_CASE("max pool backward puts the gradient on the argmax") {
  Tape t;
  Var x = t.input(Tensor::matrix(3, 2, {1, 7, 4, 2, 3, 5}));
  t.backward(t.sum(t.set_max_pool(x)));
  CHECK(t.grad(x) == Tensor::matrix(3, 2, {0, 1, 1, 0, 0, 0}));
}

TEST_CASE("set max pool is permutation invariant") {
  Rng rng(11);
  const Tensor x = random_tensor(30, 6, rng);
  std::vector<std::size_t> perm(30);
  for (std::size_t i = 0; i < 30; ++i) perm[i] = i;
  shuffle(perm, rng);
  Tape t;
  Var a = t.set_max_pool(t.constant(x));
  Var b = t.set_max_pool(t.gather_rows(t.constant(x), perm));
  CHECK(t.value(a) == t.value(b));
}

TEST_CASE("Adam update") {
  Parameter p("p", Tensor::row({1.0}));
  p.grad = Tensor::row({1.0});
  AdamState st(AdamConfig{1e-3});
  Parameter* ps[] = {&p};
  adam_step(ps, st);
  CHECK(p.value[0] - 1.0 == doctest::Approx(-9.99999e-4).epsilon(1e-6));

  Parameter q("q", Tensor::row({0.3, -2.0}));
  q.grad = Tensor::row({0.0, 0.0});
  AdamState st2(AdamConfig{1e-3});
  Parameter* qs[] = {&q};
  for (int i = 0; i < 5; ++i) adam_step(qs, st2);
  CHECK(q.value == Tensor::row({0.3, -2.0}));

  Parameter z("z", Tensor::row({0.3, -2.0}));
  z.grad = Tensor::row({0.7, -4.0});
  AdamState st3(AdamConfig{0.0});
  Parameter* zs[] = {&z};
  for (int i = 0; i < 5; ++i) adam_step(zs, st3);
  CHECK(z.value == Tensor::row({0.3, -2.0}));
}

TEST_CASE("Adam matches a scalar reference over several steps") {
  const AdamConfig cfg{2e-2, 0.9, 0.999, 1e-8, 0.5, 3};
  Parameter p("p", Tensor::row({0.5, -1.5}));
  AdamState st(cfg);
  Parameter* ps[] = {&p};
  double x[2] = {0.5, -1.5}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 8; ++step) {
    const double g[2] = {std::sin(step * 1.0), 0.1 * step};
    p.grad = Tensor::row({g[0], g[1]});
    adam_step(ps, st);
    const double lr = cfg.learning_rate * std::pow(cfg.decay_factor, (step - 1) / 3);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value[i] == doctest::Approx(x[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("grad_check on closed forms") {
  auto sq = [](Tape& t, std::span<const Var> in) { return t.sum(t.mul(in[0], in[0])); };
  const auto r = grad_check(sq, {Tensor::row({1, 2})});
  CHECK(r.max_rel_error < 1e-8);
  Tape t;
  Var x = t.input(Tensor::row({1, 2}));
  t.backward(t.sum(t.mul(x, x)));
  CHECK(t.grad(x) == Tensor::row({2, 4}));

  auto constant = [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(3.0)); };
  const auto c = grad_check(constant, {Tensor::row({1, 2})});
  CHECK(c.max_rel_error == 0.0);
}

TEST_CASE("linear gradient w.r.t. weights") {
  Rng rng(5);
  auto f = [](Tape& t, std::span<const Var> in) { return t.sum(t.linear(in[0], in[1], in[2])); };
  const auto r = grad_check(f, {random_tensor(3, 4, rng), random_tensor(2, 4, rng), random_tensor(1, 2, rng)});
  CHECK(r.max_rel_error < 1e-6);
}

// Every op through a weighted sum, at 20 seeds.
TEST_CASE("finite differences for every op") {
  for (const auto& c : grad_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed * 7919 + 1);
      const auto r = grad_check(c.f, c.make(rng));
      INFO(c.name << " seed " << seed << " err " << r.max_rel_error);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("backward is single use and needs a scalar") {
  Tape t;
  Var x = t.input(Tensor::row({1, 2}));
  CHECK_THROWS(t.backward(x));
  Var s = t.sum(x);
  t.backward(s);
  CHECK_THROWS(t.backward(s));
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  Rng rng(9);
  LinearLayer a = LinearLayer::init("a", 3, 4, rng), b = LinearLayer::init("b", 4, 2, rng);
  std::vector<Parameter*> ps;
  a.collect(ps);
  b.collect(ps);
  save_checkpoint(dir.str("x.ckpt"), std::vector<const Parameter*>(ps.begin(), ps.end()));
  LinearLayer a2 = LinearLayer::zeros("a", 3, 4), b2 = LinearLayer::zeros("b", 4, 2);
  std::vector<Parameter*> qs;
  a2.collect(qs);
  b2.collect(qs);
  restore_checkpoint(qs, load_checkpoint(dir.str("x.ckpt")));
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value == qs[i]->value);
  LinearLayer wrong = LinearLayer::zeros("a", 3, 5);
  std::vector<Parameter*> ws;
  wrong.collect(ws);
  CHECK_THROWS_AS(restore_checkpoint(ws, load_checkpoint(dir.str("x.ckpt"))), ShapeError);
}
