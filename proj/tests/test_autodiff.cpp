#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmrec/autodiff.hpp"

using namespace mmrec;
using DGraph = GraphT<double>;
using DParam = ParameterT<double>;

namespace {

DParam random_param(const std::string& name, std::vector<size_t> shape, uint64_t seed) {
  TensorT<double> t(shape);
  SeededRng rng(seed, "param." + name);
  for (double& v : t.data) v = rng.normal();
  return DParam(name, std::move(t));
}

TensorT<double> random_input(std::vector<size_t> shape, uint64_t seed, const char* label = "input") {
  TensorT<double> t(shape);
  SeededRng rng(seed, label);
  for (double& v : t.data) v = rng.normal();
  return t;
}

// Helper: build graph, backward, return loss value.
template <typename F>
std::function<double()> runner(F&& body, std::vector<DParam*> params) {
  return [body = std::forward<F>(body), params]() mutable {
    for (auto* p : params) p->zero_grad();
    DGraph g;
    DGraph::Var loss = body(g);
    g.backward(loss);
    return static_cast<double>(g.value(loss).data[0]);
  };
}

}  // namespace

TEST_CASE("relu forward matches definition") {
  Graph g;
  auto x = g.input(Tensor({1, 3}, {-1.f, 0.f, 2.f}));
  auto y = g.relu(x);
  CHECK(g.value(y).data == std::vector<float>{0.f, 0.f, 2.f});
}

TEST_CASE("linear with identity weight and zero bias is the identity") {
  Graph g;
  Parameter w("w", Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Parameter b("b", Tensor({3}));
  auto x = g.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto y = g.linear(x, w, &b);
  CHECK(g.value(y).data == std::vector<float>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("batchnorm train mode normalizes by batch statistics") {
  Graph g;
  BatchNormState bn("bn", 1);
  bn.eps = 0.0f;
  auto x = g.input(Tensor({2, 1}, {1.f, 3.f}));
  auto y = g.batchnorm(x, bn, true);
  CHECK(g.value(y).at(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(g.value(y).at(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  // running stats were updated: mean 0.9*0 + 0.1*2, var 0.9*1 + 0.1*2 (unbiased)
  CHECK(bn.running_mean.data[0] == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(bn.running_var.data[0] == doctest::Approx(1.1).epsilon(1e-6));
}

TEST_CASE("batchnorm train mode rejects batch size 1") {
  Graph g;
  BatchNormState bn("bn", 2);
  auto x = g.input(Tensor({1, 2}, {1.f, 2.f}));
  CHECK_THROWS_AS(g.batchnorm(x, bn, true), ValidationError);
}

TEST_CASE("batchnorm eval output is independent of batch composition") {
  BatchNormState bn("bn", 2);
  bn.running_mean = Tensor({2}, {0.5f, -1.f});
  bn.running_var = Tensor({2}, {2.f, 0.7f});
  bn.gamma.value = Tensor({2}, {1.5f, 0.8f});
  bn.beta.value = Tensor({2}, {0.1f, -0.2f});
  Tensor rows({3, 2}, {1, 2, 3, 4, 5, 6});
  Graph g1;
  auto y1 = g1.batchnorm(g1.input(rows), bn, false);
  // permute rows; per-row outputs must be identical
  Tensor perm({3, 2}, {5, 6, 1, 2, 3, 4});
  Graph g2;
  auto y2 = g2.batchnorm(g2.input(perm), bn, false);
  for (size_t j = 0; j < 2; ++j) {
    CHECK(g1.value(y1).at(0, j) == g2.value(y2).at(1, j));
    CHECK(g1.value(y1).at(2, j) == g2.value(y2).at(0, j));
  }
}

TEST_CASE("elementwise ops are permutation-equivariant over the batch dimension") {
  Parameter w("w", Tensor({2, 3}, {0.3f, -1.f, 2.f, 0.7f, 0.2f, -0.4f}));
  Parameter b("b", Tensor({2}, {0.1f, -0.3f}));
  Tensor x({3, 3}, {1, 2, 3, -4, 5, -6, 7, -8, 9});
  Tensor xp({3, 3}, {7, -8, 9, 1, 2, 3, -4, 5, -6});  // rows permuted (2,0,1)
  Graph g1, g2;
  auto y1 = g1.relu(g1.linear(g1.input(x), w, &b));
  auto y2 = g2.relu(g2.linear(g2.input(xp), w, &b));
  int perm[3] = {2, 0, 1};
  for (size_t r = 0; r < 3; ++r)
    for (size_t j = 0; j < 2; ++j)
      CHECK(g1.value(y1).at(static_cast<size_t>(perm[r]), j) == g2.value(y2).at(r, j));
}

TEST_CASE("backward: dot gradient is the other operand") {
  DGraph g;
  DParam w("w", TensorT<double>({1, 3}, {0.5, -1.0, 2.0}));
  auto x = g.input(TensorT<double>({1, 3}, {1, 2, 3}));
  auto loss = g.sum_all(g.rowwise_dot(g.param(w), x));
  g.backward(loss);
  CHECK(w.grad.data == std::vector<double>{1, 2, 3});
}

TEST_CASE("backward: mean of relu uses subgradient zero at negatives") {
  DGraph g;
  DParam x("x", TensorT<double>({1, 2}, {-1.0, 2.0}));
  auto loss = g.mean_all(g.relu(g.param(x)));
  g.backward(loss);
  CHECK(x.grad.data[0] == 0.0);
  CHECK(x.grad.data[1] == 0.5);
}

TEST_CASE("grad check: scalar square at x=3 with h=1e-5") {
  DParam x("x", TensorT<double>({1, 1}, {3.0}));
  auto run = runner([&](DGraph& g) { return g.sum_all(g.rowwise_dot(g.param(x), g.param(x))); }, {&x});
  double err = grad_check<double>(run, std::vector<DParam*>{&x}, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad check: every primitive over 100 random probe points") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    // linear + bias
    {
      DParam w = random_param("w", {4, 5}, seed);
      DParam b = random_param("b", {4}, seed + 1000);
      auto x = random_input({3, 5}, seed);
      auto run = runner([&](DGraph& g) { return g.sum_all(g.relu(g.linear(g.input(x), w, &b))); },
                        {&w, &b});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&w, &b}, 1e-6));
    }
    // batchnorm train + eval through gamma/beta and input param
    {
      DParam xin = random_param("xin", {6, 3}, seed + 2000);
      BatchNormStateT<double> bn("bn", 3);
      bn.running_mean = random_input({3}, seed + 1, "rm");
      for (size_t j = 0; j < 3; ++j) bn.running_var.data[j] = 0.5 + std::abs(random_input({3}, seed + 2, "rv").data[j]);
      // weight the outputs so no gradient is structurally zero (a plain sum of
      // train-mode batchnorm outputs is constant in the input)
      auto wmat = random_input({6, 3}, seed + 3, "bnw");
      for (bool train : {true, false}) {
        auto run = runner(
            [&](DGraph& g) {
              return g.sum_all(g.rowwise_dot(g.batchnorm(g.param(xin), bn, train), g.input(wmat)));
            },
            {&xin, &bn.gamma, &bn.beta});
        // keep running stats fixed for the eval check
        auto rm = bn.running_mean, rv = bn.running_var;
        double e = grad_check<double>(run, std::vector<DParam*>{&xin, &bn.gamma, &bn.beta}, 1e-6);
        bn.running_mean = rm;
        bn.running_var = rv;
        worst = std::max(worst, e);
      }
    }
    // rows gather + mean_of + take_rows + concat + scale + add
    {
      DParam table = random_param("table", {7, 4}, seed + 3000);
      auto run = runner(
          [&](DGraph& g) {
            auto r1 = g.rows(table, {0, 3, 6});
            auto r2 = g.rows(table, {1, 3, 5});
            auto m = g.mean_of({r1, r2});
            auto cat = g.concat_rows({m, g.take_rows(m, {0, 2})});
            return g.sum_all(g.add(g.scale(cat, 0.7), cat));
          },
          {&table});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&table}, 1e-6));
    }
    // mean_groups with uneven groups
    {
      DParam table = random_param("tg", {6, 3}, seed + 3500);
      auto run = runner(
          [&](DGraph& g) {
            auto rowsv = g.rows(table, {0, 1, 2, 3, 4, 5});
            return g.sum_all(g.mean_groups(rowsv, {{0, 1, 2}, {3}, {4, 5}}));
          },
          {&table});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&table}, 1e-6));
    }
    // rowwise_dot / matmul_nt / pair_scores
    {
      DParam a = random_param("a", {3, 4}, seed + 4000);
      DParam p = random_param("p", {3, 4}, seed + 5000);
      DParam n = random_param("n", {6, 4}, seed + 6000);
      auto run = runner(
          [&](DGraph& g) {
            auto s1 = g.sum_all(g.rowwise_dot(g.param(a), g.param(p)));
            auto s2 = g.sum_all(g.matmul_nt(g.param(a), g.param(n)));
            auto s3 = g.sum_all(g.pair_scores(g.param(a), g.param(p), g.param(n)));
            return g.add(g.add(s1, s2), s3);
          },
          {&a, &p, &n});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&a, &p, &n}, 1e-6));
    }
    // bpr / softmax_xent losses over score params
    {
      DParam s = random_param("s", {3, 5}, seed + 7000);
      auto run = runner(
          [&](DGraph& g) {
            auto l1 = g.bpr_from_scores(g.param(s));
            auto l2 = g.softmax_xent(g.param(s), 0.7, {0, 2, 4});
            return g.add(l1, l2);
          },
          {&s});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&s}, 1e-6));
    }
    // cosine scorer away from the clamp
    {
      DParam a = random_param("ca", {3, 4}, seed + 8000);
      DParam b = random_param("cb", {3, 4}, seed + 9000);
      auto run = runner(
          [&](DGraph& g) {
            return g.sum_all(g.rowwise_cosine_clamped(g.param(a), g.param(b), -2.0));
          },
          {&a, &b});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&a, &b}, 1e-6));
    }
    // dropout with a frozen mask
    {
      DParam x = random_param("dx", {4, 6}, seed + 9500);
      auto run = runner(
          [&](DGraph& g) {
            SeededRng drng(seed, "drop-fixed");
            return g.sum_all(g.dropout(g.param(x), 0.3, &drng, true));
          },
          {&x});
      worst = std::max(worst, grad_check<double>(run, std::vector<DParam*>{&x}, 1e-6));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("adam: first-step update is approximately -lr for constant gradient") {
  ParameterT<double> p("p", TensorT<double>({1}, {1.0}));
  p.grad.data[0] = 2.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::vector<ParameterT<double>*> ps{&p};
  adam_step<double>(ps, cfg, 1);
  CHECK(p.value.data[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(p.grad.data[0] == 0.0);  // grads zeroed afterward
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Parameter p("p", Tensor({3}, {1.f, -2.f, 3.f}));
  std::vector<Parameter*> ps{&p};
  AdamConfig cfg;
  for (int t = 1; t <= 5; ++t) adam_step<float>(ps, cfg, t);
  CHECK(p.value.data == std::vector<float>{1.f, -2.f, 3.f});
}

TEST_CASE("adam: non-finite gradient reports the parameter by name") {
  Parameter p("layer.weight", Tensor({1}, {1.f}));
  p.grad.data[0] = std::numeric_limits<float>::quiet_NaN();
  std::vector<Parameter*> ps{&p};
  AdamConfig cfg;
  CHECK_THROWS_WITH_AS(adam_step<float>(ps, cfg, 1),
                       doctest::Contains("layer.weight"), std::runtime_error);
}

TEST_CASE("adam: identical runs produce bit-identical parameters after 100 steps") {
  auto run = [](uint64_t seed) {
    Parameter w("w", Tensor({4, 4}));
    SeededRng rng(seed, "adam-det");
    for (float& v : w.value.data) v = static_cast<float>(rng.normal());
    std::vector<Parameter*> ps{&w};
    AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 1e-4;
    for (int t = 1; t <= 100; ++t) {
      Graph g;
      auto x = g.input(Tensor({4, 4}, std::vector<float>(16, 0.5f)));
      auto loss = g.sum_all(g.matmul_nt(g.param(w), x));
      g.backward(loss);
      adam_step<float>(ps, cfg, t);
    }
    return w.value.data;
  };
  CHECK(run(5) == run(5));
}

TEST_CASE("bpr loss: equal scores give n_neg * ln 2") {
  Graph g;
  auto s = g.input(Tensor({1, 11}, std::vector<float>(11, 0.3f)));
  auto loss = g.bpr_from_scores(s);
  CHECK(g.value(loss).data[0] == doctest::Approx(10.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("softmax xent: temperature scaling invariance") {
  std::vector<float> base{1.f, -0.5f, 2.f, 0.f, 0.7f, -1.f};
  Graph g;
  auto l1 = g.softmax_xent(g.input(Tensor({2, 3}, base)), 0.5f, {0, 1});
  std::vector<float> scaled = base;
  for (float& v : scaled) v *= 8.f;
  auto l2 = g.softmax_xent(g.input(Tensor({2, 3}, scaled)), 4.0f, {0, 1});
  CHECK(g.value(l1).data[0] == doctest::Approx(g.value(l2).data[0]).epsilon(1e-6));
}

TEST_CASE("graph validates shapes") {
  Graph g;
  Parameter w("w", Tensor({2, 3}));
  auto x = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(g.linear(x, w, nullptr), ValidationError);
  auto a = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
  auto b = g.input(Tensor({2, 3}, std::vector<float>(6, 0.f)));
  CHECK_THROWS_AS(g.add(a, b), ValidationError);
  CHECK_THROWS_AS(g.softmax_xent(a, -1.0f, {0, 0}), ValidationError);
}
