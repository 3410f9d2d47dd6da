// Every differentiable primitive against central differences: random inputs in
// [-1, 1], h = 1e-6, max relative error <= 1e-5.

#include <doctest.h>

#include <functional>
#include <random>
#include <vector>

#include "rmt/finite_diff.hpp"
#include "rmt/ops.hpp"
#include "rmt/tape.hpp"
#include "support.hpp"

using namespace rmt;

namespace {

using Op = std::function<Var(Tape&, const std::vector<Var>&)>;

// Contracts the op output with a fixed random weight so that every output
// element carries a distinct cotangent.
double weighted(Tape& tape, Var out, const Tensor& w, Var* loss_out = nullptr) {
  Var loss = sum(tape, hadamard(tape, out, tape.constant(w)));
  if (loss_out) *loss_out = loss;
  return tape.value(loss)[0];
}

void check_op(const char* name, const Op& op, std::vector<Tensor> inputs, std::mt19937_64& rng,
              double tol = 1e-5) {
  Tensor w;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(probe.constant(t));
    w = test::random_tensor(probe.value(op(probe, vars)).shape(), rng);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t j = 0; j < inputs.size(); ++j) vars.push_back(j == i ? tape.parameter(inputs[j]) : tape.constant(inputs[j]));
    Var loss;
    weighted(tape, op(tape, vars), w, &loss);
    tape.backward(loss);
    const Tensor analytic = tape.grad(vars[i]);

    const Tensor fd = finite_difference_grad(
        [&](const Tensor& x) {
          Tape t;
          std::vector<Var> vs;
          for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t.constant(j == i ? x : inputs[j]));
          return weighted(t, op(t, vs), w);
        },
        inputs[i], 1e-6);
    const double err = relative_max_error(analytic, fd);
    INFO(name << " input " << i << " relative error " << err);
    CHECK(err <= tol);
  }
}

}  // namespace

TEST_CASE("tape gradients match finite differences for every primitive") {
  std::mt19937_64 rng(2024);
  auto r = [&](const Shape& s) { return test::random_tensor(s, rng); };

  check_op("matmul", [](Tape& t, const std::vector<Var>& v) { return matmul(t, v[0], v[1]); }, {r({3, 4}), r({4, 5})}, rng);
  check_op("matmul_nt", [](Tape& t, const std::vector<Var>& v) { return matmul_nt(t, v[0], v[1]); }, {r({3, 4}), r({5, 4})},
           rng);
  check_op("add", [](Tape& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }, {r({3, 4}), r({3, 4})}, rng);
  check_op("add_bias", [](Tape& t, const std::vector<Var>& v) { return add_bias(t, v[0], v[1]); }, {r({3, 4}), r({4})},
           rng);
  check_op("hadamard", [](Tape& t, const std::vector<Var>& v) { return hadamard(t, v[0], v[1]); }, {r({3, 4}), r({3, 4})},
           rng);
  check_op("scale", [](Tape& t, const std::vector<Var>& v) { return scale(t, v[0], -1.7); }, {r({3, 4})}, rng);
  Tensor divisor = Tensor::scalar(0.5 + 0.4 * r({1})[0]);
  check_op("divide_by_scalar", [](Tape& t, const std::vector<Var>& v) { return divide_by_scalar(t, v[0], v[1]); },
           {r({3, 4}), divisor}, rng);
  check_op("sum", [](Tape& t, const std::vector<Var>& v) { return sum(t, v[0]); }, {r({3, 4})}, rng);
  check_op("layer_norm", [](Tape& t, const std::vector<Var>& v) { return layer_norm(t, v[0], v[1], v[2]); },
           {r({4, 6}), r({6}), r({6})}, rng);
  check_op("gelu", [](Tape& t, const std::vector<Var>& v) { return gelu(t, v[0]); }, {r({3, 5})}, rng);
  check_op("attention", [](Tape& t, const std::vector<Var>& v) { return attention(t, v[0], v[1], v[2], 2, 3); },
           {r({6, 8}), r({6, 8}), r({6, 8})}, rng);
  check_op("mean_pool", [](Tape& t, const std::vector<Var>& v) { return mean_pool(t, v[0], 3); }, {r({6, 4})}, rng);
  check_op("l2_normalize_rows", [](Tape& t, const std::vector<Var>& v) { return l2_normalize_rows(t, v[0]); },
           {r({3, 5})}, rng);

  const std::vector<int> labels{1, 0, 3};
  check_op("softmax_cross_entropy",
           [&](Tape& t, const std::vector<Var>& v) { return softmax_cross_entropy(t, v[0], labels); }, {r({3, 4})}, rng);
  const Tensor p_ref = softmax_rows(r({3, 4}));
  check_op("kl_divergence", [&](Tape& t, const std::vector<Var>& v) { return kl_divergence(t, p_ref, v[0]); },
           {r({3, 4})}, rng);
}

TEST_CASE("a composed pre-norm block matches finite differences") {
  std::mt19937_64 rng(99);
  auto r = [&](const Shape& s) { return test::random_tensor(s, rng); };
  const std::size_t T = 4, d = 8;
  const Tensor x = r({2 * T, d});
  const Tensor gamma = r({d}), beta = r({d});
  std::vector<Tensor> w{r({d, d}), r({d, d}), r({d, d}), r({d, d})};
  const Tensor protos = r({5, d});
  const std::vector<int> labels{2, 4};

  auto build = [&](Tape& t, const std::vector<Var>& ws) {
    Var h = layer_norm(t, t.constant(x), t.constant(gamma), t.constant(beta));
    Var a = attention(t, matmul_nt(t, h, ws[0]), matmul_nt(t, h, ws[1]), matmul_nt(t, h, ws[2]), 2, T);
    Var y = add(t, t.constant(x), matmul_nt(t, a, ws[3]));
    Var f = l2_normalize_rows(t, mean_pool(t, y, T));
    return softmax_cross_entropy(t, scale(t, matmul_nt(t, f, t.constant(protos)), 1.0 / 0.07), labels);
  };
  for (std::size_t i = 0; i < w.size(); ++i) {
    Tape tape;
    std::vector<Var> ws;
    for (std::size_t j = 0; j < w.size(); ++j) ws.push_back(j == i ? tape.parameter(w[j]) : tape.constant(w[j]));
    tape.backward(build(tape, ws));
    const Tensor analytic = tape.grad(ws[i]);
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& m) {
          Tape t;
          std::vector<Var> vs;
          for (std::size_t j = 0; j < w.size(); ++j) vs.push_back(t.constant(j == i ? m : w[j]));
          return t.value(build(t, vs))[0];
        },
        w[i]);
    CHECK(relative_max_error(analytic, fd) <= 1e-5);
  }
}
