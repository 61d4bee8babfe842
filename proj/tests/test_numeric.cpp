#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gtf/adagrad.hpp"
#include "gtf/grad_check.hpp"
#include "gtf/ops.hpp"
#include "gtf/tensor.hpp"

using namespace gtf;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = true) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Vec v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from_flat(std::move(v), std::move(shape), rg);
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::vector({0.0, 0.0});
  Tensor y = softmax(x, 0);
  CHECK(y(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("layer norm maps a constant vector to the bias") {
  Tensor x = Tensor::vector({3.0, 3.0, 3.0});
  Tensor gain = Tensor::constant({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layer_norm(x, gain, bias);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(y(i)) < 1e-9);
}

TEST_CASE("leaky relu slope on the negative side") {
  Tensor x = Tensor::vector({-1.0});
  CHECK(leaky_relu(x, 0.2)(0) == doctest::Approx(-0.2));
}

TEST_CASE("shape mismatches are rejected with both shapes reported") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3,4]") != std::string::npos);
    CHECK(msg.find("[5,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("softmax over an empty axis is rejected") {
  Tensor x = Tensor::zeros({0});
  CHECK_THROWS_AS(softmax(x, 0), ShapeError);
}

TEST_CASE("tanh gradient at zero is one") {
  Tensor x = Tensor::vector({0.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = tanh(x);
  tape.backward(y, Tensor::scalar(1.0));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("gradient of sum is all ones") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 3}, rng);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum_all(x);
  tape.backward(y, Tensor::scalar(1.0));
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  double err = grad_check_leaves([&]() { return sum_all(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("backward before any forward is rejected") {
  Tape tape;
  Tensor x = Tensor::vector({1.0}, true);
  CHECK_THROWS_AS(tape.backward(x, Tensor::scalar(1.0)), NumericalError);
}

TEST_CASE("backward rejects a seed of the wrong shape") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = tanh(x);
  CHECK_THROWS_AS(tape.backward(y, Tensor::scalar(1.0)), ShapeError);
}

TEST_CASE("grad_check on sum(tanh(x))") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3}, rng);
  double err = grad_check([](const Tensor& t) { return sum_all(tanh(t)); }, x);
  CHECK(err < 1e-6);
}

TEST_CASE("gradient of sum(softmax(x)) is the zero vector") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({5}, rng);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum_all(softmax(x, 0));
  tape.backward(y, Tensor::scalar(1.0));
  for (Index i = 0; i < x.numel(); ++i) CHECK(std::abs(x.grad()[i]) < 1e-12);
}

TEST_CASE("grad_check on a layer-norm composite") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({4}, rng);
  Tensor gain = random_tensor({4}, rng);
  Tensor bias = random_tensor({4}, rng);
  double err = grad_check_leaves(
      [&]() { return sum_all(tanh(layer_norm(x, gain, bias))); }, {x, gain, bias});
  CHECK(err < 1e-5);
}

TEST_CASE("every primitive gradient matches finite differences") {
  std::mt19937_64 rng(6);
  auto check = [](const char* name, double err) {
    INFO(name);
    CHECK(err < 1e-4);
  };
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 3}, rng);
    check("matmul", grad_check_leaves([&]() { return sum_all(matmul(a, b)); }, {a, b}));
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    check("transpose",
          grad_check_leaves([&]() { return sum_all(tanh(transpose(a))); }, {a}));
  }
  {
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    check("add", grad_check_leaves([&]() { return sum_all(tanh(add(a, b))); }, {a, b}));
    check("mul", grad_check_leaves([&]() { return sum_all(tanh(mul(a, b))); }, {a, b}));
  }
  {
    Tensor a = random_tensor({2, 3}, rng), s = random_tensor({1}, rng);
    check("add broadcast",
          grad_check_leaves([&]() { return sum_all(tanh(add(a, s))); }, {a, s}));
    check("mul broadcast",
          grad_check_leaves([&]() { return sum_all(tanh(mul(a, s))); }, {a, s}));
  }
  {
    Tensor a = random_tensor({5}, rng);
    check("scale", grad_check_leaves([&]() { return sum_all(scale(a, -1.7)); }, {a}));
    check("add_scalar",
          grad_check_leaves([&]() { return sum_all(tanh(add_scalar(a, 0.3))); }, {a}));
    check("tanh", grad_check_leaves([&]() { return sum_all(tanh(a)); }, {a}));
    check("sigmoid", grad_check_leaves([&]() { return sum_all(sigmoid(a)); }, {a}));
    check("leaky_relu",
          grad_check_leaves([&]() { return sum_all(leaky_relu(a, 0.2)); }, {a}));
    check("relu", grad_check_leaves([&]() { return sum_all(relu(a)); }, {a}));
    check("clamp",
          grad_check_leaves([&]() { return sum_all(clamp(a, -2.5, 2.5)); }, {a}));
    check("softmax vec",
          grad_check_leaves([&]() { return sum_all(tanh(softmax(a, 0))); }, {a}));
  }
  {
    Tensor a = random_tensor({4}, rng);
    // keep log inputs strictly positive
    check("log", grad_check_leaves(
                     [&]() { return sum_all(log(add_scalar(tanh(a), 1.5))); }, {a}));
  }
  {
    Tensor a = random_tensor({2, 4}, rng), b = random_tensor({3, 4}, rng);
    check("concat axis0", grad_check_leaves(
                              [&]() { return sum_all(tanh(concat({a, b}, 0))); }, {a, b}));
  }
  {
    Tensor a = random_tensor({2, 2}, rng), b = random_tensor({2, 3}, rng);
    check("concat axis1", grad_check_leaves(
                              [&]() { return sum_all(tanh(concat({a, b}, 1))); }, {a, b}));
  }
  {
    Tensor a = random_tensor({4}, rng), b = random_tensor({4}, rng);
    check("stack_rows", grad_check_leaves(
                            [&]() { return sum_all(tanh(stack_rows({a, b}))); }, {a, b}));
  }
  {
    Tensor a = random_tensor({2, 3}, rng);
    check("reshape", grad_check_leaves(
                         [&]() { return sum_all(tanh(reshape(a, {3, 2}))); }, {a}));
    check("gather_rows",
          grad_check_leaves(
              [&]() { return sum_all(tanh(gather_rows(a, {1, 0, 1}))); }, {a}));
    check("sum axis0", grad_check_leaves([&]() { return sum_all(tanh(sum(a, 0))); }, {a}));
    check("sum axis1", grad_check_leaves([&]() { return sum_all(tanh(sum(a, 1))); }, {a}));
    check("mean axis0",
          grad_check_leaves([&]() { return sum_all(tanh(mean(a, 0))); }, {a}));
    check("mean axis1",
          grad_check_leaves([&]() { return sum_all(tanh(mean(a, 1))); }, {a}));
    check("reduce_max",
          grad_check_leaves([&]() { return sum_all(tanh(reduce_max(a, 0))); }, {a}));
    check("softmax rows",
          grad_check_leaves([&]() { return sum_all(tanh(softmax(a, 1))); }, {a}));
  }
  {
    Tensor a = random_tensor({2, 4}, rng);
    Tensor mask = Tensor::matrix(2, 4, {1, 0, 1, 1, 0, 1, 1, 0});
    check("masked_softmax",
          grad_check_leaves(
              [&]() { return sum_all(tanh(masked_softmax(a, mask, 1))); }, {a}));
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
    check("layer_norm matrix",
          grad_check_leaves(
              [&]() { return sum_all(tanh(layer_norm(a, gain, bias))); },
              {a, gain, bias}));
  }
  {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
    check("affine", grad_check_leaves(
                        [&]() { return sum_all(tanh(affine(x, w, b))); }, {x, w, b}));
  }
  {
    Tensor x = random_tensor({4}, rng);
    Tensor w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
    check("affine vector input",
          grad_check_leaves([&]() { return sum_all(tanh(affine(x, w, b))); }, {x, w, b}));
  }
}

TEST_CASE("softmax outputs are non-negative and normalized") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 6}, rng, false);
    Tensor y = softmax(x, 1);
    for (Index i = 0; i < 4; ++i) {
      double s = 0;
      for (Index j = 0; j < 6; ++j) {
        CHECK(y(i, j) >= 0.0);
        s += y(i, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("masked softmax excludes masked entries") {
  Tensor x = Tensor::matrix(1, 4, {5.0, 1.0, 2.0, 3.0});
  Tensor mask = Tensor::matrix(1, 4, {0.0, 1.0, 1.0, 1.0});
  Tensor y = masked_softmax(x, mask, 1);
  CHECK(y(0, 0) == 0.0);
  CHECK(std::abs(y(0, 1) + y(0, 2) + y(0, 3) - 1.0) <= 1e-12);
  // a fully masked group is rejected
  Tensor none = Tensor::zeros({1, 4});
  CHECK_THROWS_AS(masked_softmax(x, none, 1), NumericalError);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({4, 4}, rng, false);
  Tensor b = random_tensor({4, 4}, rng, false);
  Tensor gain = Tensor::constant({4}, 1.0), bias = Tensor::zeros({4});
  auto run = [&]() {
    return layer_norm(tanh(matmul(softmax(a, 1), b)), gain, bias).values();
  };
  Vec first = run();
  for (int i = 0; i < 5; ++i) {
    Vec again = run();
    for (Index k = 0; k < first.size(); ++k) CHECK(first[k] == again[k]);
  }
}

TEST_CASE("a tensor used twice accumulates both path gradients") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({3}, rng);
  Vec doubled;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = sum_all(add(x, x));
    tape.backward(y, Tensor::scalar(1.0));
    doubled = x.grad();
  }
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = sum_all(x);
    tape.backward(y, Tensor::scalar(1.0));
  }
  for (Index i = 0; i < 3; ++i) {
    CHECK(doubled[i] == doctest::Approx(2.0 * x.grad()[i]));
  }
}

TEST_CASE("tape records each non-leaf output exactly once") {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({3, 3}, rng);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor h = tanh(matmul(x, x));
    sum_all(add(h, h));
  }
  std::vector<std::uint64_t> outputs;
  for (const auto& e : tape.entries()) outputs.push_back(e.output.id());
  std::sort(outputs.begin(), outputs.end());
  CHECK(std::adjacent_find(outputs.begin(), outputs.end()) == outputs.end());
}

TEST_CASE("ops are recorded only for gradient-bearing inputs") {
  Tensor x = Tensor::vector({1.0, 2.0}, false);
  Tape tape;
  {
    TapeScope scope(tape);
    tanh(x);
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("adagrad leaves parameters alone on zero gradient") {
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  p.grad_mut().setZero();
  AdagradState state;
  state.lr = 0.1;
  adagrad_step({p}, state);
  CHECK(p(0) == 1.0);
  CHECK(p(1) == -2.0);
  CHECK(state.accumulators.at(p.id()).sum() == 0.0);
}

TEST_CASE("first adagrad step moves by about the learning rate") {
  Tensor p = Tensor::vector({0.0}, true);
  p.grad_mut()[0] = 3.0;
  AdagradState state;
  state.lr = 0.1;
  adagrad_step({p}, state);
  CHECK(std::abs(p(0) + 0.1) < 1e-9);  // eta * |g| / (|g| + eps) ~ eta
}

TEST_CASE("two adagrad steps with constant gradient follow the recurrence") {
  Tensor p = Tensor::vector({1.0}, true);
  AdagradState state;
  state.lr = 0.1;
  p.grad_mut()[0] = 1.0;
  adagrad_step({p}, state);
  CHECK(p(0) == doctest::Approx(0.9).epsilon(1e-7));
  p.zero_grad();
  p.grad_mut()[0] = 1.0;
  adagrad_step({p}, state);
  CHECK(p(0) == doctest::Approx(0.9 - 0.1 / std::sqrt(2.0)).epsilon(1e-7));
}

TEST_CASE("non-finite gradients are rejected per parameter") {
  Tensor p = Tensor::vector({1.0}, true);
  Tensor q = Tensor::vector({1.0}, true);
  p.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  q.grad_mut()[0] = 1.0;
  AdagradState state;
  state.lr = 0.1;
  adagrad_step({p, q}, state);
  CHECK(p(0) == 1.0);  // untouched
  CHECK(q(0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(state.rejected_steps == 1);
  CHECK(state.accumulators.count(p.id()) == 0);
}

TEST_CASE("adagrad accumulators never decrease") {
  std::mt19937_64 rng(11);
  Tensor p = random_tensor({6}, rng);
  AdagradState state;
  Vec prev = Vec::Zero(6);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int step = 0; step < 20; ++step) {
    p.zero_grad();
    for (Index i = 0; i < 6; ++i) p.grad_mut()[i] = dist(rng);
    adagrad_step({p}, state);
    const Vec& acc = state.accumulators.at(p.id());
    for (Index i = 0; i < 6; ++i) CHECK(acc[i] >= prev[i]);
    prev = acc;
  }
}
