#include <cmath>
#include <numeric>

#include "doctest.h"
#include "star/autodiff.hpp"
#include "star/errors.hpp"
#include "star/profiler.hpp"
#include "support/oracles.hpp"

using namespace star;
using star::testing::finite_difference_check;
using star::testing::random_tensor;
using star::testing::weighted_sum;

TEST_CASE("matmul identity, ones and loop oracle") {
  Tape tape(false);
  Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.constant(Tensor({2, 2}, {2.5, -1, 3, 7}));
  CHECK(matmul(eye, m).value().same_values(m.value()));

  Var row = tape.constant(Tensor::ones({1, 3}));
  Var col = tape.constant(Tensor::ones({3, 1}));
  CHECK(matmul(row, col).value().item() == 3.0);

  Rng rng(11);
  Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 2}, rng);
  Tensor got = matmul(tape.constant(a), tape.constant(b)).value();
  CHECK(max_abs_diff(got, star::testing::loop_matmul(a, b)) < 1e-12);

  CHECK_THROWS_AS(matmul(tape.constant(a), tape.constant(a)), DimensionError);
}

TEST_CASE("matmul records m*k*n MACs when profiling") {
  Profiler prof;
  Tape tape(false);
  {
    profiling::Session session(prof);
    matmul(tape.constant(Tensor::ones({4, 5})), tape.constant(Tensor::ones({5, 2})));
  }
  CHECK(prof.total_macs() == 40);
  // no session: nothing recorded
  matmul(tape.constant(Tensor::ones({4, 5})), tape.constant(Tensor::ones({5, 2})));
  CHECK(prof.total_calls() == 1);
}

TEST_CASE("elementwise scalar values") {
  Tape tape(false);
  Var zero = tape.constant(Tensor::scalar(0.0));
  CHECK(silu(zero).value().item() == 0.0);
  CHECK(add_scalar(elu(zero), 1.0).value().item() == 1.0);
  CHECK(sigmoid(zero).value().item() == 0.5);
  Var three = tape.constant(Tensor::scalar(3.0));
  CHECK(add_scalar(elu(three), 1.0).value().item() == 4.0);
  CHECK(elementwise(ElementwiseKind::kScale, three, nullptr, 2.0).value().item() == 6.0);
}

TEST_CASE("broadcasting is limited to scalar, row and column cases") {
  Tape tape(false);
  Var a = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var row = tape.constant(Tensor({3}, {10, 20, 30}));
  Var col = tape.constant(Tensor({2, 1}, {100, 200}));
  Var s = tape.constant(Tensor::scalar(2));
  CHECK(add(a, row).value().same_values(Tensor({2, 3}, {11, 22, 33, 14, 25, 36})));
  CHECK(add(a, col).value().same_values(Tensor({2, 3}, {101, 102, 103, 204, 205, 206})));
  CHECK(mul(a, s).value().same_values(Tensor({2, 3}, {2, 4, 6, 8, 10, 12})));
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({2}, {1, 2}))), DimensionError);
  CHECK_THROWS_AS(add(row, a), DimensionError);
}

TEST_CASE("division by zero surfaces as a numeric error") {
  Tape tape(false);
  Var a = tape.constant(Tensor({2}, {1, 2}));
  Var z = tape.constant(Tensor({2}, {1, 0}));
  CHECK_THROWS_AS(div(a, z), NumericError);
}

TEST_CASE("gather and scatter_sum examples") {
  Tape tape(false);
  Var src = tape.constant(Tensor({3, 1}, {1, 2, 3}));
  CHECK(gather(src, make_index({2, 0})).value().same_values(Tensor({2, 1}, {3, 1})));
  CHECK(gather(src, make_index({0, 1, 2})).value().same_values(src.value()));
  CHECK_THROWS_AS(gather(src, make_index({3})), IndexError);

  CHECK(scatter_sum(src, make_index({0, 0, 1}), 2).value().same_values(Tensor({2, 1}, {3, 3})));
  CHECK(scatter_sum(src, make_index({2, 0, 1}), 3).value().same_values(Tensor({3, 1}, {2, 3, 1})));
  CHECK_THROWS_AS(scatter_sum(src, make_index({0, 0, 2}), 2), IndexError);
}

TEST_CASE("scatter_max marks empty groups and yields 0 for them") {
  Tape tape(false);
  Var src = tape.constant(Tensor({3, 2}, {1, -5, 4, -7, -2, -1}));
  ScatterMaxResult r = scatter_max(src, make_index({0, 0, 2}), 4);
  CHECK(r.values.value().same_values(Tensor({4, 2}, {4, -5, 0, 0, -2, -1, 0, 0})));
  CHECK(r.empty == std::vector<bool>{false, true, false, true});
}

TEST_CASE("scatter_sum then gather matches a loop oracle") {
  Rng rng(5);
  Tensor src = random_tensor({40, 3}, rng);
  Index idx(40);
  for (auto& i : idx) i = rng.uniform_index(7);
  Tape tape(false);
  Var sums = scatter_sum(tape.constant(src), make_index(idx), 7);
  Var back = gather(sums, make_index(idx));
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 40; ++j)
        if (idx[j] == idx[i]) expect += src.at(j, c);
      CHECK(std::abs(back.value().at(i, c) - expect) < 1e-12);
    }
}

TEST_CASE("gather then scatter_sum equals a dense masked matmul") {
  // out[r] = sum_e [query[e] == r] * src[key[e]]  ==  (M @ src)[r]
  Rng rng(6);
  const std::size_t n = 9, d = 4, m = 30;
  Tensor src = random_tensor({n, d}, rng);
  Index query(m), key(m);
  std::vector<double> dense(n * n, 0.0);
  for (std::size_t e = 0; e < m; ++e) {
    query[e] = rng.uniform_index(n);
    key[e] = rng.uniform_index(n);
    dense[query[e] * n + key[e]] += 1.0;
  }
  Tape tape(false);
  Var got = scatter_sum(gather(tape.constant(src), make_index(key)), make_index(query), n);
  Tensor expect = star::testing::loop_matmul(Tensor({n, n}, dense), src);
  CHECK(max_abs_diff(got.value(), expect) < 1e-12);
}

TEST_CASE("layer_norm examples") {
  Tape tape(false);
  Var gamma = tape.constant(Tensor({4}, {1, 2, 3, 4}));
  Var beta = tape.constant(Tensor({4}, {0.5, -1, 2, 0}));
  Var constant_row = tape.constant(Tensor::full({1, 4}, 7.0));
  CHECK(layer_norm(constant_row, gamma, beta).value().same_values(beta.value().reshaped({1, 4})));

  Rng rng(3);
  Var x = tape.constant(random_tensor({5, 4}, rng, -3, 3));
  Var y = layer_norm(x, tape.constant(Tensor::ones({4})), beta);
  const double mean_beta = (0.5 - 1 + 2 + 0) / 4.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < 4; ++c) mean += y.value().at(r, c);
    CHECK(std::abs(mean / 4.0 - mean_beta) < 1e-9);
  }
  CHECK_THROWS_AS(layer_norm(tape.constant(Tensor::zeros({3, 0})), tape.constant(Tensor::zeros({0})),
                             tape.constant(Tensor::zeros({0}))),
                  DimensionError);
}

TEST_CASE("backward basics") {
  Tape tape;
  Rng rng(1);
  Tensor xt = random_tensor({3, 2}, rng);
  Var x = tape.leaf(xt, true);
  Var unused = tape.leaf(Tensor::ones({2}), true);
  tape.backward(sum(x));
  CHECK(tape.grad(x).same_values(Tensor::ones({3, 2})));
  CHECK(tape.grad(unused).same_values(Tensor::zeros({2})));

  Tape t2;
  Var y = t2.leaf(xt, true);
  t2.backward(sum(mul(y, y)));
  Tensor g = t2.grad(y);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == 2 * xt[i]);

  Tape t3;
  Var z = t3.leaf(xt, true);
  CHECK_THROWS_AS(t3.backward(z), DimensionError);
  Var detached = sum(t3.constant(xt));
  CHECK_THROWS_AS(t3.backward(detached), InvalidArgument);
}

TEST_CASE("backward leaves every requires_grad leaf with a same-shaped gradient") {
  Tape tape;
  Rng rng(2);
  Var a = tape.leaf(random_tensor({3, 4}, rng), true);
  Var b = tape.leaf(random_tensor({4, 2}, rng), true);
  Var c = tape.leaf(random_tensor({5}, rng), true);
  tape.backward(sum(tanh(matmul(a, b))));
  CHECK(tape.grad(a).shape() == a.shape());
  CHECK(tape.grad(b).shape() == b.shape());
  CHECK(tape.grad(c).shape() == c.shape());
}

TEST_CASE("analytic gradients match central differences for every differentiable op") {
  Rng rng(42);
  using B = star::testing::LossBuilder;
  struct Case {
    const char* name;
    std::vector<Tensor> inputs;
    B build;
  };
  auto idx = make_index({2, 0, 1, 2, 3, 0});
  std::vector<Case> cases = {
      {"matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, matmul(v[0], v[1]), 1); }},
      {"linear", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, linear(v[0], v[1], v[2]), 2); }},
      {"bmm", {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, bmm(v[0], v[1]), 3); }},
      {"rowwise_dot", {random_tensor({5, 3}, rng), random_tensor({5, 3}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, rowwise_dot(v[0], v[1]), 4); }},
      {"add/sub row+column", {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({3, 1}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, sub(add(v[0], v[1]), v[2]), 5); }},
      {"mul/div", {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng, 0.5, 2.0), random_tensor({4}, rng, 0.5, 2.0)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, div(mul(v[0], v[1]), v[2]), 6); }},
      {"unary chain", {random_tensor({4, 3}, rng, -2, 2)},
       [](Tape& t, std::span<const Var> v) {
         return weighted_sum(t, add(add(silu(v[0]), tanh(v[0])), add(sigmoid(v[0]), elu(v[0]))), 7);
       }},
      {"exp/scale", {random_tensor({4, 3}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, scale(exp(add_scalar(v[0], 0.3)), -1.7), 8); }},
      {"permute/reshape", {random_tensor({2, 3, 4}, rng)},
       [](Tape& t, std::span<const Var> v) {
         const std::size_t axes[] = {2, 0, 1};
         return weighted_sum(t, reshape(permute(v[0], axes), {4, 6}), 9);
       }},
      {"gather", {random_tensor({4, 3}, rng)},
       [idx](Tape& t, std::span<const Var> v) { return weighted_sum(t, gather(v[0], idx), 10); }},
      {"scatter_sum", {random_tensor({6, 2}, rng)},
       [idx](Tape& t, std::span<const Var> v) { return weighted_sum(t, scatter_sum(v[0], idx, 5), 11); }},
      {"scatter_max", {random_tensor({6, 2}, rng)},
       [idx](Tape& t, std::span<const Var> v) { return weighted_sum(t, scatter_max(v[0], idx, 5).values, 12); }},
      {"layer_norm", {random_tensor({3, 5}, rng, -2, 2), random_tensor({5}, rng), random_tensor({5}, rng)},
       [](Tape& t, std::span<const Var> v) { return weighted_sum(t, layer_norm(v[0], v[1], v[2]), 13); }},
      {"masked_softmax", {random_tensor({2, 3, 3}, rng, -2, 2)},
       [](Tape& t, std::span<const Var> v) {
         Tensor mask({3, 3}, {1, 1, 0, 1, 1, 1, 0, 1, 1});
         return weighted_sum(t, masked_softmax(v[0], mask), 14);
       }},
      {"cross_entropy", {random_tensor({4, 3}, rng, -2, 2)},
       [](Tape&, std::span<const Var> v) {
         const std::size_t labels[] = {0, 2, 1, 2};
         return cross_entropy(v[0], labels);
       }},
      {"dropout (fixed seed)", {random_tensor({4, 3}, rng)},
       [](Tape& t, std::span<const Var> v) {
         Rng drop(77);
         return weighted_sum(t, dropout(v[0], 0.5, true, drop), 15);
       }},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    auto report = finite_difference_check(c.build, c.inputs);
    CHECK(report.max_rel < 1e-4);
  }
}

TEST_CASE("dropout contract") {
  Tape tape(false);
  Rng rng(9);
  Var x = tape.constant(random_tensor({10, 10}, rng));
  CHECK(dropout(x, 0.0, true, rng).value().same_values(x.value()));
  CHECK(dropout(x, 0.7, false, rng).value().same_values(x.value()));
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), InvalidArgument);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), InvalidArgument);

  // Monte Carlo: 1e5 samples of a constant input keep their mean.
  Var ones = tape.constant(Tensor::full({100000}, 3.0));
  Tensor y = dropout(ones, 0.5, true, rng).value();
  double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 1e5;
  CHECK(std::abs(mean - 3.0) / 3.0 < 0.02);
}

TEST_CASE("tape replay is deterministic under a fixed seed") {
  auto run = [] {
    Tape tape;
    Rng init(123);
    Var w = tape.leaf(random_tensor({6, 6}, init), true);
    Var x = tape.constant(random_tensor({8, 6}, init));
    Rng drop(5);
    Var y = dropout(silu(matmul(x, w)), 0.5, true, drop);
    Var loss = sum(mul(y, y));
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.grad(w));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1.same_values(l2));
  CHECK(g1.same_values(g2));
}
