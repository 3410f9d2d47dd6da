#include <doctest.h>

#include <cmath>
#include <random>

#include "rmt/errors.hpp"
#include "rmt/finite_diff.hpp"
#include "rmt/ops.hpp"
#include "rmt/tape.hpp"
#include "support.hpp"

using namespace rmt;

TEST_CASE("tensor shape and payload must agree") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(shape_size(t.shape()) == t.size());
  CHECK(Tensor::vector({1, 2, 3}).rows() == 1);
}

TEST_CASE("matmul small cases") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(matmul(a, id).identical(a));
  const Tensor dot = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  CHECK(dot.shape() == Shape{1, 1});
  CHECK(dot[0] == 11.0);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient of sum(output) is ones times b transposed") {
  std::mt19937_64 rng(11);
  const Tensor a = test::random_tensor({3, 4}, rng);
  const Tensor b = test::random_tensor({4, 2}, rng);
  Tape tape;
  Var va = tape.parameter(a);
  Var out = sum(tape, matmul(tape, va, tape.constant(b)));
  tape.backward(out);
  const Tensor analytic = tape.grad(va);

  // Oracle 1: ones[3x2] * b^T, element (i, k) = sum_j b(k, j).
  Tensor expected({3, 4});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) expected(i, k) = b(k, 0) + b(k, 1);
  }
  CHECK(max_abs_diff(analytic, expected) <= 1e-12);

  // Oracle 2: central differences.
  const Tensor fd = finite_difference_grad(
      [&](const Tensor& x) {
        const Tensor y = matmul(x, b);
        double s = 0.0;
        for (double v : y.data()) s += v;
        return s;
      },
      a, 1e-6);
  CHECK(relative_max_error(analytic, fd) <= 1e-8);
}

TEST_CASE("softmax cross entropy examples") {
  const std::vector<int> l0{0}, l2{2};
  CHECK(softmax_cross_entropy(Tensor::matrix({{0, 0, 0}}), l0) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(softmax_cross_entropy(Tensor::matrix({{0, 0, 0}}), l0) == doctest::Approx(1.0986).epsilon(1e-4));

  const double saturated = softmax_cross_entropy(Tensor::matrix({{10, -10}}), l0);
  CHECK(saturated == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(saturated == doctest::Approx(2.06e-9).epsilon(1e-2));

  const double direct = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double got = softmax_cross_entropy(Tensor::matrix({{1, 2, 3}}), l2);
  CHECK(got == doctest::Approx(direct).epsilon(1e-14));
  CHECK(got == doctest::Approx(0.4076).epsilon(1e-4));

  // Rank-1 logits are a batch of one.
  CHECK(softmax_cross_entropy(Tensor::vector({1, 2, 3}), l2) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("cross entropy label out of range is an index error") {
  const std::vector<int> bad{3}, neg{-1};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix({{0, 0, 0}}), bad), IndexError);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix({{0, 0, 0}}), neg), IndexError);
  Tape tape;
  Var l = tape.parameter(Tensor::matrix({{0, 0, 0}}));
  CHECK_THROWS_AS(softmax_cross_entropy(tape, l, bad), IndexError);
}

TEST_CASE("cross entropy gradient is (softmax - onehot) / B") {
  std::mt19937_64 rng(3);
  const Tensor logits = test::random_tensor({4, 5}, rng, -3.0, 3.0);
  const std::vector<int> labels{0, 4, 2, 2};
  Tape tape;
  Var l = tape.parameter(logits);
  tape.backward(softmax_cross_entropy(tape, l, labels));
  const Tensor p = softmax_rows(logits);
  Tensor expected = p;
  for (std::size_t r = 0; r < 4; ++r) {
    expected(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    for (std::size_t c = 0; c < 5; ++c) expected(r, c) /= 4.0;
  }
  CHECK(max_abs_diff(tape.grad(l), expected) <= 1e-15);
}

TEST_CASE("kl divergence examples") {
  const Tensor logits = Tensor::matrix({{0.3, -1.2, 2.0}});
  const Tensor p = softmax_rows(logits);
  CHECK(std::abs(kl_divergence(p, logits)) <= 1e-15);

  // logits giving [0.5, 0.5]
  CHECK(kl_divergence(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // logits giving [0.8, 0.2]: log-odds ln 4
  const double expected = 0.5 * std::log(0.5 / 0.8) + 0.5 * std::log(0.5 / 0.2);
  const double got = kl_divergence(Tensor::matrix({{0.5, 0.5}}), Tensor::matrix({{std::log(4.0), 0.0}}));
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.2231).epsilon(1e-4));
}

TEST_CASE("kl gradient vanishes exactly when the reference is the model softmax") {
  std::mt19937_64 rng(5);
  const Tensor logits = test::random_tensor({6, 7}, rng, -4.0, 4.0);
  const Tensor p = softmax_rows(logits);
  Tape tape;
  Var l = tape.parameter(logits);
  Var loss = kl_divergence(tape, p, l);
  tape.backward(loss);
  CHECK(std::abs(tape.value(loss)[0]) <= 1e-12);
  CHECK(max_abs(tape.grad(l)) <= 1e-12);
}

TEST_CASE("kl gradient is (softmax - p_ref) / B and zero-probability terms are legal") {
  const Tensor p_ref = Tensor::matrix({{1, 0, 0}, {0.25, 0.25, 0.5}});
  const Tensor logits = Tensor::matrix({{0.1, 0.2, -0.3}, {2.0, -1.0, 0.5}});
  Tape tape;
  Var l = tape.parameter(logits);
  Var loss = kl_divergence(tape, p_ref, l);
  tape.backward(loss);
  CHECK(std::isfinite(tape.value(loss)[0]));
  const Tensor q = softmax_rows(logits);
  Tensor expected({2, 3});
  for (std::size_t i = 0; i < 6; ++i) expected[i] = (q[i] - p_ref[i]) / 2.0;
  CHECK(max_abs_diff(tape.grad(l), expected) <= 1e-15);
}

TEST_CASE("kl rejects unnormalized or negative references") {
  CHECK_THROWS_AS(kl_divergence(Tensor::matrix({{0.5, 0.6}}), Tensor::matrix({{0, 0}})), ValidationError);
  CHECK_THROWS_AS(kl_divergence(Tensor::matrix({{1.5, -0.5}}), Tensor::matrix({{0, 0}})), ValidationError);
  Tape tape;
  Var l = tape.parameter(Tensor::matrix({{0, 0}}));
  CHECK_THROWS_AS(kl_divergence(tape, Tensor::matrix({{0.3, 0.3}}), l), ValidationError);
}

TEST_CASE("cosine similarity examples") {
  const Tensor f = Tensor::vector({0.3, -2.0, 1.1});
  CHECK(cosine_similarity(f, f) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == 0.0);
  CHECK(cosine_similarity(Tensor::vector({1, 1}), Tensor::vector({1, 0})) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})), DegenerateInputError);
}

TEST_CASE("layer norm of a constant row is zero before the affine part") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{2.5, 2.5, 2.5, 2.5}}));
  Var y = layer_norm(tape, x, tape.constant(Tensor::vector({1, 1, 1, 1})), tape.constant(Tensor::vector({0, 0, 0, 0})));
  CHECK(max_abs(tape.value(y)) == 0.0);
  Var z = layer_norm(tape, x, tape.constant(Tensor::vector({3, 3, 3, 3})), tape.constant(Tensor::vector({1, 2, 3, 4})));
  CHECK(tape.value(z).identical(Tensor::matrix({{1, 2, 3, 4}})));
}

TEST_CASE("single-token attention returns the value row") {
  std::mt19937_64 rng(9);
  const Tensor q = test::random_tensor({3, 8}, rng);
  const Tensor k = test::random_tensor({3, 8}, rng);
  const Tensor v = test::random_tensor({3, 8}, rng);
  Tape tape;
  // Three samples of one token each.
  Var out = attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), 2, 1);
  CHECK(max_abs_diff(tape.value(out), v) <= 1e-15);
}

TEST_CASE("attention head count must divide the width") {
  Tape tape;
  Var x = tape.constant(Tensor({4, 6}));
  CHECK_THROWS_AS(attention(tape, x, x, x, 4, 2), DimensionError);
}

TEST_CASE("gelu matches the erf definition") {
  Tape tape;
  const Tensor x = Tensor::vector({-3.0, -0.5, 0.0, 0.7, 2.0});
  Var y = gelu(tape, tape.constant(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expected = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
    CHECK(tape.value(y)[i] == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("finite differences examples") {
  const Tensor g = finite_difference_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::vector({3.0}), 1e-5);
  CHECK(std::abs(g[0] - 6.0) <= 1e-8);

  std::mt19937_64 rng(1);
  const Tensor x = test::random_tensor({2, 5}, rng, -10.0, 10.0);
  const Tensor ones = finite_difference_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v;
        return s;
      },
      x);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("finite differences agree with the tape on cross entropy of a two-layer net") {
  std::mt19937_64 rng(21);
  const Tensor x = test::random_tensor({5, 4}, rng);
  const Tensor w1 = test::random_tensor({6, 4}, rng);
  const Tensor w2 = test::random_tensor({3, 6}, rng);
  const std::vector<int> labels{0, 2, 1, 1, 0};

  auto loss = [&](const Tensor& a, Tape& tape, Var* wv) {
    Var w = tape.parameter(a);
    if (wv) *wv = w;
    Var h = gelu(tape, matmul_nt(tape, tape.constant(x), w));
    return softmax_cross_entropy(tape, matmul_nt(tape, h, tape.constant(w2)), labels);
  };
  Tape tape;
  Var w;
  tape.backward(loss(w1, tape, &w));
  const Tensor analytic = tape.grad(w);
  const Tensor fd = finite_difference_grad(
      [&](const Tensor& a) {
        Tape t;
        return t.value(loss(a, t, nullptr))[0];
      },
      w1);
  CHECK(relative_max_error(analytic, fd) <= 1e-6);
}

TEST_CASE("softmax and loss properties on random inputs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor logits = test::random_tensor({3, 6}, rng, -20.0, 20.0);
    const Tensor p = softmax_rows(logits);
    CHECK(p.all_finite());
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : p.row(r)) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    std::uniform_int_distribution<int> label(0, 5);
    const std::vector<int> labels{label(rng), label(rng), label(rng)};
    CHECK(softmax_cross_entropy(logits, labels) >= 0.0);

    const Tensor other = test::random_tensor({3, 6}, rng, -5.0, 5.0);
    CHECK(kl_divergence(softmax_rows(other), logits) >= 0.0);
    CHECK(std::abs(kl_divergence(p, logits)) <= 1e-12);
  }
}

TEST_CASE("saturated logits stay finite") {
  const Tensor logits = Tensor::matrix({{800.0, -800.0, 0.0}});
  const Tensor p = softmax_rows(logits);
  CHECK(p.all_finite());
  const std::vector<int> l1{1};
  CHECK(std::isfinite(softmax_cross_entropy(logits, l1)));
}

TEST_CASE("tape grad before backward is a state error") {
  Tape tape;
  Var a = tape.parameter(Tensor::vector({1.0}));
  CHECK_THROWS_AS(tape.grad(a), StateError);
  Var c = tape.constant(Tensor::vector({1.0}));
  tape.backward(sum(tape, hadamard(tape, a, c)));
  CHECK_THROWS_AS(tape.grad(c), StateError);
  CHECK(tape.grad(a)[0] == 1.0);
}

TEST_CASE("gradients do not depend on how many parameters are registered") {
  std::mt19937_64 rng(8);
  const Tensor a = test::random_tensor({4, 3}, rng);
  const Tensor b = test::random_tensor({3, 5}, rng);
  const Tensor c = test::random_tensor({5}, rng);
  auto run = [&](bool register_b) {
    Tape tape;
    Var va = tape.parameter(a);
    Var vb = register_b ? tape.parameter(b) : tape.constant(b);
    Var y = add_bias(tape, matmul(tape, va, vb), tape.parameter(c));
    tape.backward(sum(tape, gelu(tape, y)));
    return tape.grad(va);
  };
  CHECK(run(true).identical(run(false)));
}
