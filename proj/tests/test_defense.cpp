#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "invlab/defense.hpp"
#include "invlab/metrics.hpp"
#include "invlab/rng.hpp"

using namespace invlab;

namespace {

DatasetSpec toy_spec(std::uint64_t seed = 7) {
  DatasetSpec spec;
  spec.kind = DatasetKind::Toy2d;
  spec.seed = seed;
  return spec;
}

ModelConfig toy_model_config(std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.encoder_widths = {20, 20};
  cfg.classes = 3;
  cfg.init_seed = seed;
  return cfg;
}

TensorPtr uniform_logprobs(Tape& tape, int batch, int classes) {
  auto logits = make_leaf({batch, classes},
                          std::vector<double>(static_cast<std::size_t>(batch) * classes, 0.0));
  return tape.softmax_logprobs(logits);
}

// Golden-section minimizer of a unimodal function on [lo, hi].
double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  while (b - a > tol) {
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return (a + b) / 2.0;
}

}  // namespace

TEST_CASE("ce_loss: one-hot is zero, uniform is ln C") {
  Tape tape;
  // near-one-hot prediction via huge logit margin
  auto logits = make_leaf({2, 3}, {100.0, 0.0, 0.0, 0.0, 100.0, 0.0});
  auto lp = tape.softmax_logprobs(logits);
  auto loss = ce_loss(tape, lp, {0, 1});
  CHECK(loss->values[0] == doctest::Approx(0.0).epsilon(1e-12));

  auto uniform = uniform_logprobs(tape, 4, 3);
  auto loss_u = ce_loss(tape, uniform, {0, 1, 2, 0});
  CHECK(loss_u->values[0] == doctest::Approx(std::log(3.0)));
}

TEST_CASE("ce_loss: out-of-range label is a contract error") {
  Tape tape;
  auto lp = uniform_logprobs(tape, 2, 3);
  CHECK_THROWS_AS(ce_loss(tape, lp, {0, 3}), ContractError);
}

TEST_CASE("ce gradient matches central differences") {
  Rng rng(3);
  auto fn = [](Tape& t, const TensorPtr& x) {
    return ce_loss(t, t.softmax_logprobs(x), {1, 0, 2});
  };
  for (int trial = 0; trial < 3; ++trial) {
    Tensor probe(Shape{3, 3}, std::vector<double>(9));
    for (double& v : probe.values) v = 2.0 * rng.normal();
    CHECK(gradcheck(fn, probe) <= 1e-5);
  }
}

TEST_CASE("ca_loss: hand values") {
  {
    Tape tape;
    auto probs = make_leaf({1, 2}, {1.0, 0.0});
    auto loss = ca_loss(tape, probs, {0}, 1.0, 8.0);
    CHECK(loss->values[0] == doctest::Approx(0.0));  // log 1 = 0
  }
  {
    Tape tape;
    auto probs = make_leaf({1, 2}, {0.5, 0.5});
    auto loss = ca_loss(tape, probs, {0}, 1.0, 1.0);
    CHECK(loss->values[0] == doctest::Approx(0.5 * std::log(0.5)));  // -0.346574
  }
  {
    // clamp path: zero probability is clamped to 1e-12 and counted
    Tape tape;
    auto probs = make_leaf({1, 2}, {0.0, 1.0});
    int clamps = 0;
    auto loss = ca_loss(tape, probs, {0}, 1.0, 8.0, &clamps);
    CHECK(clamps == 1);
    CHECK(std::isfinite(loss->values[0]));
  }
}

TEST_CASE("ca_loss minimizer: golden-section locates exp(-1/b) for b in {1,2,4,8}") {
  for (double b : {1.0, 2.0, 4.0, 8.0}) {
    auto f = [b](double t) { return t == 0.0 ? 0.0 : std::pow(t, b) * std::log(t); };
    const double argmin = golden_min(f, 1e-9, 1.0, 1e-9);
    CHECK(std::abs(argmin - ca_minimizer(b)) <= 1e-6);
  }
}

TEST_CASE("ca_loss derivative at the minimizer vanishes, curvature positive") {
  for (double b : {1.0, 2.0, 4.0, 8.0}) {
    const double a = 1.0;
    const double t = ca_minimizer(b);
    const double d1 = a * std::pow(t, b - 1.0) * (b * std::log(t) + 1.0);
    const double d2 = a * std::pow(t, b - 2.0) * (b * (b - 1.0) * std::log(t) + 2.0 * b - 1.0);
    CHECK(std::abs(d1) <= 1e-9);
    CHECK(d2 > 0.0);
  }
}

TEST_CASE("ca_minimizer values and monotonicity") {
  CHECK(ca_minimizer(1.0) == doctest::Approx(0.3678794411714423).epsilon(1e-12));
  CHECK(ca_minimizer(8.0) == doctest::Approx(0.8824969025845955).epsilon(1e-12));
  double prev = 0.0;
  for (double b : {0.5, 1.0, 2.0, 4.0, 8.0, 64.0, 1e6}) {
    const double m = ca_minimizer(b);
    CHECK(m > prev);
    prev = m;
  }
  CHECK(prev < 1.0);
  CHECK(ca_minimizer(1e12) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(ca_minimizer(0.0), ContractError);
  CHECK_THROWS_AS(ca_minimizer(-1.0), ContractError);
}

TEST_CASE("ca_loss gradient matches central differences through softmax") {
  Rng rng(5);
  auto fn = [](Tape& t, const TensorPtr& x) {
    auto probs = t.exp(t.softmax_logprobs(x));
    return ca_loss(t, probs, {0, 1}, 1.0, 8.0);
  };
  Tensor probe(Shape{2, 3}, std::vector<double>(6));
  for (double& v : probe.values) v = rng.normal();
  CHECK(gradcheck(fn, probe) <= 1e-5);
}

TEST_CASE("ls_loss: lambda=0 equals ce bit-for-bit, uniform gives ln C for any lambda") {
  Rng rng(9);
  Tape tape;
  auto logits = make_leaf({4, 5}, [&] {
    std::vector<double> v(20);
    for (double& x : v) x = rng.normal();
    return v;
  }());
  auto lp = tape.softmax_logprobs(logits);
  const std::vector<int> labels = {0, 3, 2, 4};
  auto ce = ce_loss(tape, lp, labels);
  auto ls0 = ls_loss(tape, lp, labels, 0.0);
  CHECK(std::abs(ls0->values[0] - ce->values[0]) <= 1e-12);

  for (double lambda : {-0.9, -0.3, -0.1, 0.2, 0.5, 0.99}) {
    Tape t2;
    auto uniform = uniform_logprobs(t2, 3, 4);
    auto loss = ls_loss(t2, uniform, {0, 1, 2}, lambda);
    CHECK(loss->values[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("ls_loss at lambda=-0.3 matches the direct formula") {
  // direct, independent evaluation of (1-l)*CE(y, p) + (l/C)*sum_c -log p_c
  Tape tape;
  auto logits = make_leaf({2, 3}, {1.0, 0.5, -0.5, 2.0, -1.0, 0.0});
  auto lp = tape.softmax_logprobs(logits);
  const std::vector<int> labels = {0, 2};
  const double lambda = -0.3;
  auto loss = ls_loss(tape, lp, labels, lambda);

  double expected = 0.0;
  for (int i = 0; i < 2; ++i) {
    double ce_term = -lp->at(i, labels[i]);
    double all_term = 0.0;
    for (int c = 0; c < 3; ++c) all_term -= lp->at(i, c);
    expected += (1.0 - lambda) * ce_term + (lambda / 3.0) * all_term;
  }
  expected /= 2.0;
  CHECK(loss->values[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ls_loss rejects lambda outside (-1, 1)") {
  Tape tape;
  auto lp = uniform_logprobs(tape, 2, 3);
  CHECK_THROWS_AS(ls_loss(tape, lp, {0, 1}, 1.0), ValidationError);
  CHECK_THROWS_AS(ls_loss(tape, lp, {0, 1}, -1.0), ValidationError);
}

TEST_CASE("mid_kl: exact values and nonnegativity") {
  {
    Tape tape;
    auto mu = make_leaf({1, 4}, std::vector<double>(4, 0.0));
    auto sigma = make_leaf({1, 4}, std::vector<double>(4, 1.0));
    CHECK(mid_kl(tape, mu, sigma)->values[0] == 0.0);
  }
  {
    Tape tape;
    auto mu = make_leaf({1, 1}, {1.0});
    auto sigma = make_leaf({1, 1}, {1.0});
    CHECK(mid_kl(tape, mu, sigma)->values[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape;
    std::vector<double> mv(6), sv(6);
    for (double& v : mv) v = rng.normal();
    for (double& v : sv) v = 0.1 + std::abs(rng.normal());
    auto mu = make_leaf({2, 3}, mv);
    auto sigma = make_leaf({2, 3}, sv);
    CHECK(mid_kl(tape, mu, sigma)->values[0] >= -1e-15);
  }
}

TEST_CASE("mid_head: deterministic latent equals mu, sampled latent differs") {
  auto cfg = toy_model_config(25);
  cfg.vib_width = 6;
  auto model = build_classifier(cfg);
  Tape tape;
  auto features = make_leaf({2, 20}, std::vector<double>(40, 0.1));
  auto det = mid_head(tape, features, *model.vib());
  CHECK(det.latent->values == det.mu->values);
  for (double s : det.sigma->values) CHECK(s > 0.0);

  Rng noise(4);
  auto sampled = mid_head(tape, features, *model.vib(), &noise);
  CHECK(sampled.latent->values != sampled.mu->values);
}

TEST_CASE("mid sampling is reproducible under a fixed seed") {
  auto cfg = toy_model_config(21);
  cfg.vib_width = 8;
  auto model = build_classifier(cfg);
  auto run = [&] {
    Rng noise(derive_seed(99, "noise"));
    Tape tape;
    auto x = make_leaf({3, 2}, {0.1, 0.2, -0.5, 1.0, 0.7, -0.3});
    auto trace = model.forward_trace(tape, x, &noise);
    return trace.logits->values;
  };
  CHECK(run() == run());
}

TEST_CASE("hsic: constant argument gives exactly zero") {
  Tape tape;
  Rng rng(13);
  std::vector<double> xv(8 * 2);
  for (double& v : xv) v = rng.normal();
  auto x = make_leaf({8, 2}, xv);
  auto z = make_leaf({8, 3}, std::vector<double>(24, 0.7));
  CHECK(hsic(tape, x, z, 1.0)->values[0] == 0.0);
}

TEST_CASE("hsic: identical distinct points give a strictly positive value") {
  Tape tape;
  Rng rng(15);
  std::vector<double> xv(10 * 2);
  for (double& v : xv) v = rng.normal();
  auto x = make_leaf({10, 2}, xv);
  auto z = make_leaf({10, 2}, xv);
  const double self = hsic(tape, x, z, 0.0)->values[0];
  CHECK(self > 0.0);

  // independent oracle: direct dense evaluation of trace(KHLH)/(n-1)^2
  const int n = 10;
  auto kernel = [&](const std::vector<double>& v, int i, int j, double w) {
    double d = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double diff = v[i * 2 + k] - v[j * 2 + k];
      d += diff * diff;
    }
    return std::exp(-d / (2.0 * w * w));
  };
  // median heuristic width, recomputed independently
  std::vector<double> dists;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double diff = xv[i * 2 + k] - xv[j * 2 + k];
        d += diff * diff;
      }
      dists.push_back(std::sqrt(d));
    }
  std::sort(dists.begin(), dists.end());
  const double w = dists[dists.size() / 2];

  std::vector<double> K(n * n), H(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      K[i * n + j] = kernel(xv, i, j, w);
      H[i * n + j] = (i == j ? 1.0 : 0.0) - 1.0 / n;
    }
  auto mm = [n](const std::vector<double>& A, const std::vector<double>& B) {
    std::vector<double> C(n * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j) C[i * n + j] += A[i * n + k] * B[k * n + j];
    return C;
  };
  auto khlh = mm(mm(mm(K, H), K), H);
  double trace = 0.0;
  for (int i = 0; i < n; ++i) trace += khlh[i * n + i];
  const double oracle = trace / ((n - 1.0) * (n - 1.0));
  CHECK(self == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("hsic: independent samples score far below identical samples") {
  Rng rng(17);
  const int n = 256;
  std::vector<double> xv(n * 2), zv(n * 2);
  for (double& v : xv) v = rng.normal();
  for (double& v : zv) v = rng.normal();
  Tape tape;
  auto x = make_leaf({n, 2}, xv);
  auto z_indep = make_leaf({n, 2}, zv);
  auto z_same = make_leaf({n, 2}, xv);
  const double dependent = hsic(tape, x, z_same, 0.0)->values[0];
  const double independent = hsic(tape, x, z_indep, 0.0)->values[0];
  CHECK(dependent > 0.0);
  CHECK(independent < 0.05 * dependent);
}

TEST_CASE("hsic: symmetric in its arguments and nonnegative on random probes") {
  Rng rng(19);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(12));
    std::vector<double> xv(n * 2), zv(n * 3);
    for (double& v : xv) v = rng.normal();
    for (double& v : zv) v = rng.normal();
    Tape tape;
    auto x = make_leaf({n, 2}, xv);
    auto z = make_leaf({n, 3}, zv);
    const double xz = hsic(tape, x, z, 0.0)->values[0];
    const double zx = hsic(tape, z, x, 0.0)->values[0];
    CHECK(xz == doctest::Approx(zx).epsilon(1e-12));
    CHECK(xz >= -1e-12);
  }
}

TEST_CASE("hsic: fewer than 4 samples is a contract error") {
  Tape tape;
  auto x = make_leaf({3, 2}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(hsic(tape, x, x, 1.0), ContractError);
}

TEST_CASE("bido_loss: zero weights reduce to ce; gradient reaches the encoder") {
  auto bundle = gen_toy2d(toy_spec());
  auto model = build_classifier(toy_model_config(31));
  Tape tape;
  auto x = make_leaf({8, 2}, std::vector<double>(bundle.train.features.begin(),
                                                 bundle.train.features.begin() + 16));
  std::vector<int> labels(bundle.train.labels.begin(), bundle.train.labels.begin() + 8);
  auto trace = model.forward_trace(tape, x);
  auto lp = tape.softmax_logprobs(trace.logits);
  auto ce = ce_loss(tape, lp, labels);
  auto zero = bido_loss(tape, ce, x, trace.taps, labels, 3, 0.0, 0.0, 0.0);
  CHECK(zero->values[0] == ce->values[0]);

  // reference weights (0.01, 0.1) are accepted and train the encoder
  auto full = bido_loss(tape, ce, x, trace.taps, labels, 3, 0.01, 0.1, 0.0);
  tape.backward(full);
  double encoder_grad_norm = 0.0;
  for (double g : model.encoder()[0].w->grad) encoder_grad_norm += g * g;
  CHECK(encoder_grad_norm > 0.0);
}

TEST_CASE("tl freeze: ratio endpoints and frozen-parameter invariance") {
  auto bundle = gen_toy2d(toy_spec());
  auto model = build_classifier(toy_model_config(41));
  apply_tl_freeze(model, 0.0);
  CHECK(model.trainable_params().size() == model.params().size());

  apply_tl_freeze(model, 1.0);
  CHECK(model.trainable_params().size() == 2);  // standard head w, b

  auto tl_model = build_classifier(toy_model_config(43));
  const auto frozen_w = tl_model.encoder()[0].w->values;
  DefenseConfig tl;
  tl.kind = DefenseKind::TL;
  tl.tl_freeze_ratio = 0.5;  // freezes 1 of 2 encoder layers
  TrainOptions opts;
  opts.epochs = 20;
  opts.seed = 5;
  train(tl_model, bundle, tl, opts);
  CHECK(tl_model.encoder()[0].w->values == frozen_w);
  CHECK(tl_model.encoder()[1].w->values != build_classifier(toy_model_config(43)).encoder()[1].w->values);
}

TEST_CASE("train: undefended toy run separates the clusters") {
  auto bundle = gen_toy2d(toy_spec(77));
  auto model = build_classifier(toy_model_config(78));
  DefenseConfig none;
  TrainOptions opts;
  opts.epochs = 200;
  opts.seed = 79;
  auto report = train(model, bundle, none, opts);
  CHECK(report.train_accuracy >= 0.99);
  CHECK(report.test_accuracy >= 0.9);
  CHECK(report.epoch_loss.size() == 200);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
}

TEST_CASE("train: epochs=0 leaves parameters untouched") {
  auto bundle = gen_toy2d(toy_spec(7));
  auto model = build_classifier(toy_model_config(91));
  const auto before = param_checksum(model);
  DefenseConfig none;
  TrainOptions opts;
  opts.epochs = 0;
  train(model, bundle, none, opts);
  CHECK(param_checksum(model) == before);
}

TEST_CASE("train: divergence raises a training error with the epoch") {
  auto bundle = gen_toy2d(toy_spec(7));
  auto model = build_classifier(toy_model_config(92));
  DefenseConfig none;
  TrainOptions opts;
  opts.epochs = 50;
  opts.lr = 1e300;  // guaranteed overflow into NaN logits
  try {
    train(model, bundle, none, opts);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 0);
  }
}

TEST_CASE("calor stage 2 moves train confidence to exp(-1/8) without wrecking accuracy") {
  auto bundle = gen_toy2d(toy_spec(101));

  // CE-only baseline on the same low-rank architecture
  auto base_cfg = toy_model_config(102);
  base_cfg.head = HeadKind::LowRank;
  base_cfg.rank = 2;
  base_cfg.head_activation = Activation::Tanh;
  auto ce_model = build_classifier(base_cfg);
  DefenseConfig none;
  TrainOptions opts;
  opts.epochs = 300;
  opts.seed = 103;
  auto ce_report = train(ce_model, bundle, none, opts);

  auto calor_model = build_classifier(base_cfg);
  DefenseConfig calor;
  calor.kind = DefenseKind::CaLoR;
  calor.ca.a = 1.0;
  calor.ca.b = 8.0;
  auto calor_report = train(calor_model, bundle, calor, opts);

  const double target = ca_minimizer(8.0);  // 0.8825
  CHECK(std::abs(calor_report.mean_train_confidence - target) <= 0.05);
  CHECK(ce_report.test_accuracy - calor_report.test_accuracy <= 0.03);
}
