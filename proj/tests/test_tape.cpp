#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "invlab/rng.hpp"
#include "invlab/tape.hpp"

using namespace invlab;

namespace {

TensorPtr random_leaf(Rng& rng, Shape shape, bool requires_grad, double scale = 1.0) {
  std::size_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return make_leaf(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Rng rng(7);
  auto m = random_leaf(rng, {3, 3}, false);
  auto eye = make_leaf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto prod = tape.matmul(eye, m);
  for (int i = 0; i < 9; ++i) CHECK(prod->values[i] == m->values[i]);

  auto a = make_leaf({2, 2}, {1, 2, 3, 4});
  auto b = make_leaf({2, 1}, {1, 1});
  auto c = tape.matmul(a, b);
  CHECK(c->values[0] == 3.0);
  CHECK(c->values[1] == 7.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Tape tape;
  auto a = make_leaf({2, 3}, std::vector<double>(6, 0.0));
  auto b = make_leaf({2, 2}, std::vector<double>(4, 0.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  try {
    tape.matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    auto b_vals = random_leaf(rng, {4, 3}, false);
    auto fn = [&](Tape& t, const TensorPtr& a) {
      auto b = make_leaf(b_vals->shape, b_vals->values);
      return t.sum(t.matmul(a, b));
    };
    Tensor probe(Shape{2, 4}, std::vector<double>(8));
    for (double& v : probe.values) v = rng.normal();
    CHECK(gradcheck(fn, probe) <= 1e-5);
  }
}

TEST_CASE("activations: values and backward gradients") {
  Tape tape;
  auto zero = make_leaf({1, 1}, {0.0}, true);
  auto th = tape.activate(zero, Activation::Tanh);
  CHECK(th->values[0] == 0.0);
  auto loss = tape.sum(th);
  tape.backward(loss);
  CHECK(zero->grad[0] == 1.0);  // 1 - tanh^2(0) = 1

  Tape tape2;
  auto neg = make_leaf({1, 1}, {-1.0}, true);
  auto re = tape2.activate(neg, Activation::Relu);
  CHECK(re->values[0] == 0.0);
  tape2.backward(tape2.sum(re));
  CHECK(neg->grad[0] == 0.0);

  Tape tape3;
  auto big = make_leaf({1, 1}, {10.0}, true);
  auto saturated = tape3.activate(big, Activation::Tanh);
  tape3.backward(tape3.sum(saturated));
  CHECK(big->grad[0] < 1e-7);
}

TEST_CASE("saturation ordering at moderate input: tanh < sigmoid < relu") {
  for (double x0 : {3.0, 5.0, 8.0}) {
    double grads[3];
    const Activation kinds[] = {Activation::Tanh, Activation::Sigmoid, Activation::Relu};
    for (int i = 0; i < 3; ++i) {
      Tape tape;
      auto x = make_leaf({1, 1}, {x0}, true);
      tape.backward(tape.sum(tape.activate(x, kinds[i])));
      grads[i] = x->grad[0];
    }
    CHECK(grads[0] < grads[1]);
    CHECK(grads[1] < grads[2]);
    CHECK(grads[2] == 1.0);  // relu passes the upstream gradient exactly
  }
}

TEST_CASE("softmax_logprobs: symmetry, stability, normalization") {
  Tape tape;
  auto flat = make_leaf({1, 3}, {0.0, 0.0, 0.0});
  auto lp = tape.softmax_logprobs(flat);
  for (int j = 0; j < 3; ++j) CHECK(lp->values[j] == doctest::Approx(std::log(1.0 / 3.0)));

  auto spiky = make_leaf({1, 3}, {1000.0, 0.0, 0.0});
  auto lp2 = tape.softmax_logprobs(spiky);
  CHECK(std::isfinite(lp2->values[0]));
  CHECK(lp2->values[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lp2->values[1] == doctest::Approx(-1000.0));
  CHECK(lp2->values[2] == doctest::Approx(-1000.0));

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_leaf(rng, {4, 6}, false, 3.0);
    auto out = tape.softmax_logprobs(logits);
    for (int i = 0; i < 4; ++i) {
      double total = 0.0;
      for (int j = 0; j < 6; ++j) total += std::exp(out->at(i, j));
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax_logprobs gradient vs central differences") {
  Rng rng(13);
  auto fn = [&](Tape& t, const TensorPtr& x) {
    auto lp = t.softmax_logprobs(x);
    // weighted sum so the gradient is not trivially zero
    auto w = make_leaf(lp->shape, [&] {
      std::vector<double> v(lp->numel());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i + 1);
      return v;
    }());
    return t.frob_inner(lp, w);
  };
  for (int trial = 0; trial < 3; ++trial) {
    Tensor probe(Shape{3, 5}, std::vector<double>(15));
    for (double& v : probe.values) v = 2.0 * rng.normal();
    CHECK(gradcheck(fn, probe) <= 1e-5);
  }
}

TEST_CASE("backward contract errors") {
  Tape tape;
  auto x = make_leaf({2, 2}, {1, 2, 3, 4}, true);
  auto y = tape.activate(x, Activation::Tanh);
  CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar

  Tape tape2;
  auto frozen = make_leaf({1}, {1.0}, false);
  CHECK_THROWS_AS(tape2.backward(frozen), ContractError);  // no grad path
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  Tape tape;
  auto x = make_leaf({1, 2}, {0.5, -0.25}, true);
  auto y = tape.activate(x, Activation::Tanh);
  auto loss = tape.sum(y);
  tape.backward(loss);
  const double g0 = x->grad[0], g1 = x->grad[1];
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(2 * g0).epsilon(1e-15));
  CHECK(x->grad[1] == doctest::Approx(2 * g1).epsilon(1e-15));
}

TEST_CASE("fan-out gradients accumulate additively") {
  Tape tape;
  auto x = make_leaf({1, 1}, {3.0}, true);
  auto doubled = tape.add(x, x);  // y = 2x
  tape.backward(tape.sum(doubled));
  CHECK(x->grad[0] == 2.0);
}

TEST_CASE("sgd: lr=0 is a no-op, single step hand case, quadratic convergence") {
  auto w = make_leaf({1, 1}, {1.0}, true);
  {
    Tape tape;
    auto loss = tape.mul(w, w);
    tape.backward(tape.sum(loss));
    sgd_step({w}, 0.0, 0.0);
    CHECK(w->values[0] == 1.0);
  }
  {
    w->values[0] = 1.0;
    Tape tape;
    auto loss = tape.mul(w, w);
    tape.backward(tape.sum(loss));
    sgd_step({w}, 0.1, 0.0);  // grad = 2 at w=1
    CHECK(w->values[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(w->grad[0] == 0.0);  // cleared by the step
  }
  {
    // f(w) = (w - 3)^2 has its minimum at w = 3 (closed form oracle)
    auto p = make_leaf({1, 1}, {-2.0}, true);
    SgdOptimizer opt({p}, 0.3, 0.5);
    for (int step = 0; step < 200; ++step) {
      Tape tape;
      auto shifted = tape.add_scalar(p, -3.0);
      tape.backward(tape.sum(tape.mul(shifted, shifted)));
      opt.step();
    }
    CHECK(std::abs(p->values[0] - 3.0) < 1e-6);
  }
}

TEST_CASE("sgd: missing gradient is a contract error") {
  auto w = make_leaf({1, 1}, {1.0}, true);
  CHECK_THROWS_AS(sgd_step({w}, 0.1, 0.0), ContractError);
}

TEST_CASE("gradcheck rejects oversized probes") {
  Tensor big(Shape{9, 8}, std::vector<double>(72, 0.0));
  CHECK_THROWS_AS(
      gradcheck([](Tape& t, const TensorPtr& x) { return t.sum(x); }, big), ContractError);
}

TEST_CASE("gradcheck: linear is exact, nonlinear chains within 1e-5") {
  Rng rng(17);
  auto linear = [](Tape& t, const TensorPtr& x) { return t.sum(t.scale(x, 2.5)); };
  Tensor probe(Shape{2, 3}, std::vector<double>(6));
  for (double& v : probe.values) v = rng.normal();
  CHECK(gradcheck(linear, probe) <= 1e-9);

  auto chain = [](Tape& t, const TensorPtr& x) {
    return t.mean(t.activate(t.activate(x, Activation::Tanh), Activation::Tanh));
  };
  CHECK(gradcheck(chain, probe) <= 1e-5);
}

TEST_CASE("gradcheck covers every differentiable op") {
  Rng rng(19);
  const auto probes = [&](Shape s, double scale = 1.0) {
    std::size_t n = 1;
    for (int d : s) n *= d;
    Tensor t(s, std::vector<double>(n));
    for (double& v : t.values) v = scale * rng.normal();
    return t;
  };

  // elementwise and reductions
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) { return t.mean(x); }, probes({3, 4})) <= 1e-9);
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) { return t.sum(t.exp(x)); }, probes({2, 3})) <=
        1e-5);
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) {
          return t.sum(t.log(t.add_scalar(t.mul(x, x), 1.0)));
        },
        probes({2, 3})) <= 1e-5);
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) { return t.sum(t.softplus(x)); },
                  probes({2, 3})) <= 1e-5);
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) { return t.sum(t.mul(x, x)); },
                  probes({3, 3})) <= 1e-5);
  CHECK(gradcheck(
            [](Tape& t, const TensorPtr& x) { return t.sum(t.activate(x, Activation::Sigmoid)); },
            probes({4, 4})) <= 1e-5);

  // add_rowvec via both operands
  {
    auto bias = probes({1, 4});
    auto byA = [&](Tape& t, const TensorPtr& x) {
      auto b = make_leaf(bias.shape, bias.values);
      return t.sum(t.activate(t.add_rowvec(x, b), Activation::Tanh));
    };
    CHECK(gradcheck(byA, probes({3, 4})) <= 1e-5);
    auto base = probes({3, 4});
    auto byB = [&](Tape& t, const TensorPtr& b) {
      auto a = make_leaf(base.shape, base.values);
      return t.sum(t.activate(t.add_rowvec(a, b), Activation::Tanh));
    };
    CHECK(gradcheck(byB, probes({1, 4})) <= 1e-5);
  }

  // gather + pairwise distance + centering
  CHECK(gradcheck(
            [](Tape& t, const TensorPtr& x) {
              return t.mean(t.gather_labels(t.softmax_logprobs(x), {2, 0, 1}));
            },
            probes({3, 3}, 2.0)) <= 1e-5);
  CHECK(gradcheck([](Tape& t, const TensorPtr& x) { return t.sum(t.exp(t.scale(t.pairwise_sqdist(x), -0.5))); },
                  probes({4, 2})) <= 1e-5);
  CHECK(gradcheck(
            [](Tape& t, const TensorPtr& x) {
              auto k = t.exp(t.scale(t.pairwise_sqdist(x), -0.25));
              auto c = t.double_center(k);
              return t.frob_inner(c, c);
            },
            probes({5, 2})) <= 1e-5);
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape;
    auto x = random_leaf(rng, {4, 5}, false, 50.0);
    auto lp = tape.softmax_logprobs(x);
    auto probs = tape.exp(lp);
    auto act = tape.activate(tape.activate(x, Activation::Tanh), Activation::Sigmoid);
    for (double v : lp->values) CHECK(std::isfinite(v));
    for (double v : probs->values) CHECK(std::isfinite(v));
    for (double v : act->values) CHECK(std::isfinite(v));
  }
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
  auto run = [] {
    Rng rng(99);
    Tape tape;
    auto x = random_leaf(rng, {4, 4}, true);
    auto w = random_leaf(rng, {4, 2}, true);
    auto loss = tape.mean(tape.activate(tape.matmul(x, w), Activation::Tanh));
    tape.backward(loss);
    std::vector<double> out = x->values;
    out.insert(out.end(), x->grad.begin(), x->grad.end());
    out.insert(out.end(), w->grad.begin(), w->grad.end());
    out.push_back(loss->values[0]);
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
