#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mhqa/autodiff.hpp"

using namespace mhqa;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values) v = u(rng);
  return t;
}

// Plain triple loop, independent of the tape.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape[0], k = a.shape[1];
  const std::size_t n = b.rank() == 1 ? 1 : b.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < k; ++l) out[i * n + j] += a.values[i * k + l] * b.values[l * n + j];
  return out;
}

// Projects a tensor-valued function onto a fixed random direction so the
// finite-difference check sees every output coordinate.
Var project(Tape& tape, const Var& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = tape.constant(random_tensor(v.shape(), rng));
  return sum(mul(v, w));
}

double check(const std::function<Var(Tape&)>& fn, std::vector<Parameter*> params) {
  return grad_check(fn, params, 1e-6).max_relative_error;
}

}  // namespace

TEST(Autodiff, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = trial % 2 ? random_tensor({k, n}, rng) : random_tensor({k}, rng);
    Tape tape;
    Var c = matmul(tape.constant(a), tape.constant(b));
    const auto expect = naive_matmul(a, b);
    ASSERT_EQ(c.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-12);
  }
}

TEST(Autodiff, AffineIsMatvecPlusBias) {
  std::mt19937_64 rng(4);
  const Tensor w = random_tensor({4, 3}, rng), x = random_tensor({3}, rng), b = random_tensor({4}, rng);
  Tape tape;
  Var y = affine(tape.constant(w), tape.constant(x), tape.constant(b));
  const auto wx = naive_matmul(w, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], wx[i] + b[i], 1e-12);
}

TEST(Autodiff, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2}));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(b, tape.constant(Tensor({3}))), ShapeError);
  EXPECT_THROW(slice(b, 1, 2), ShapeError);
  EXPECT_THROW(pick(b, 2), ShapeError);
}

TEST(Autodiff, GradientsOfEveryOpMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  Parameter m("m", random_tensor({3, 4}, rng));
  Parameter n("n", random_tensor({4, 2}, rng));
  Parameter x("x", random_tensor({4}, rng));
  Parameter y("y", random_tensor({4}, rng));
  Parameter b("b", random_tensor({3}, rng));
  Parameter pos("pos", random_tensor({4}, rng, 0.5, 2.0));

  struct Case {
    const char* name;
    std::function<Var(Tape&)> fn;
    std::vector<Parameter*> params;
  };
  const std::vector<std::size_t> slots{1, 0, SIZE_MAX, 1};
  const std::vector<Case> cases = {
      {"matmul", [&](Tape& t) { return project(t, matmul(t.param(m), t.param(n)), 1); }, {&m, &n}},
      {"matvec", [&](Tape& t) { return project(t, matmul(t.param(m), t.param(x)), 2); }, {&m, &x}},
      {"affine", [&](Tape& t) { return project(t, affine(t.param(m), t.param(x), t.param(b)), 3); }, {&m, &x, &b}},
      {"add", [&](Tape& t) { return project(t, t.param(x) + t.param(y), 4); }, {&x, &y}},
      {"sub", [&](Tape& t) { return project(t, t.param(x) - t.param(y), 5); }, {&x, &y}},
      {"mul", [&](Tape& t) { return project(t, t.param(x) * t.param(y), 6); }, {&x, &y}},
      {"scale", [&](Tape& t) { return project(t, scale(t.param(x), -2.5), 7); }, {&x}},
      {"sigmoid", [&](Tape& t) { return project(t, sigmoid(t.param(x)), 8); }, {&x}},
      {"tanh", [&](Tape& t) { return project(t, tanh(t.param(x)), 9); }, {&x}},
      {"log", [&](Tape& t) { return project(t, log(t.param(pos)), 10); }, {&pos}},
      {"softmax", [&](Tape& t) { return project(t, softmax(t.param(x)), 11); }, {&x}},
      {"concat", [&](Tape& t) { return project(t, concat({t.param(x), t.param(b), t.param(y)}), 12); }, {&x, &b, &y}},
      {"slice", [&](Tape& t) { return project(t, slice(t.param(x), 1, 2), 13); }, {&x}},
      {"sum_n",
       [&](Tape& t) {
         const std::vector<Var> parts{t.param(x), t.param(y), t.param(x)};
         return project(t, sum_n(parts), 14);
       },
       {&x, &y}},
      {"dot", [&](Tape& t) { return dot(t.param(x), t.param(y)); }, {&x, &y}},
      {"pick", [&](Tape& t) { return pick(tanh(t.param(x)), 2); }, {&x}},
      {"index_sum", [&](Tape& t) { return project(t, index_sum(t.param(x), slots, 2), 15); }, {&x}},
      {"row", [&](Tape& t) { return project(t, row(t.param(m), 1), 16); }, {&m}},
      {"sum", [&](Tape& t) { return sum(sigmoid(t.param(m))); }, {&m}},
      {"sum_squares", [&](Tape& t) { return sum_squares(t.param(m)); }, {&m}},
      {"dropout",
       [&](Tape& t) {
         std::mt19937_64 mask_rng(99);
         return project(t, dropout(t.param(x), 0.5, mask_rng), 17);
       },
       {&x}},
  };
  for (const auto& c : cases) {
    EXPECT_LT(check(c.fn, c.params), 1e-6) << c.name;
  }
}

TEST(Autodiff, ReusedParameterAccumulatesGradient) {
  Parameter x("x", Tensor({3}, {1.0, -2.0, 0.5}));
  x.zero_grad();
  Tape tape;
  Var v = tape.param(x);
  tape.backward(sum(v * v));
  EXPECT_DOUBLE_EQ(x.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad[1], -4.0);
  EXPECT_DOUBLE_EQ(x.grad[2], 1.0);

  Tape second;
  second.backward(sum(second.param(x)));
  EXPECT_DOUBLE_EQ(x.grad[0], 3.0) << "gradients add up until zero_grad";
}

TEST(Autodiff, FrozenParameterGetsNoGradient) {
  Parameter x("x", Tensor({2}, {1.0, 2.0}));
  x.trainable = false;
  Tape tape;
  Var v = tape.param(x);
  EXPECT_FALSE(tape.requires_grad(v));
  tape.backward(sum(v));
  EXPECT_DOUBLE_EQ(x.grad[0], 0.0);
}

TEST(Autodiff, BackwardMisuseThrows) {
  Parameter x("x", Tensor({2}, {1.0, 2.0}));
  Tape tape;
  Var v = tape.param(x);
  EXPECT_THROW(tape.backward(v), ShapeError);
  Var s = sum(v);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), std::logic_error);

  Tape no_grad(false);
  EXPECT_THROW(no_grad.backward(sum(no_grad.param(x))), std::logic_error);
}

TEST(Autodiff, NonFiniteValuesAreRejected) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor({2}, {1.0, 0.0}))), NumericError);
  EXPECT_THROW(tape.constant(Tensor({1}, std::vector<double>{std::nan("")})), NumericError);
}

TEST(Autodiff, SigmoidIsStableForLargeInputs) {
  Tape tape;
  Var s = sigmoid(tape.constant(Tensor({2}, {-800.0, 800.0})));
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 1.0);
}

TEST(AutodiffProperty, SoftmaxSumsToOneAndIgnoresShifts) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    const Tensor x = random_tensor({n}, rng, -10.0, 10.0);
    Tensor shifted = x;
    const double c = shift(rng);
    for (double& v : shifted.values) v += c;
    Tape tape;
    Var p = softmax(tape.constant(x));
    Var q = softmax(tape.constant(shifted));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += p[i];
      EXPECT_NEAR(p[i], q[i], 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(AutodiffProperty, DropoutKeepsOrZeroesWithInvertedScaling) {
  std::mt19937_64 rng(5);
  Tape tape;
  Var x = tape.constant(Tensor({1000}, 1.0));
  Var d = dropout(x, 0.25, rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    ASSERT_TRUE(d[i] == 0.0 || std::abs(d[i] - 1.0 / 0.75) < 1e-15);
    kept += d[i] != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
  std::mt19937_64 unused(5);
  EXPECT_EQ(dropout(x, 0.0, unused).id(), x.id());
}

TEST(GradCheck, RichardsonBeatsCentralOnCurvedFunction) {
  Parameter x("x", Tensor({1}, std::vector<double>{0.7}));
  const auto fn = [&](Tape& t) { Var v = t.param(x); return sum(v * v * v * v * v); };
  std::vector<Parameter*> ps{&x};
  const double central = grad_check(fn, ps, 1e-2, Difference::Central).max_relative_error;
  const double richardson = grad_check(fn, ps, 1e-2, Difference::Richardson).max_relative_error;
  EXPECT_LT(richardson, central / 100.0);
  EXPECT_LT(richardson, 1e-8);
}

TEST(GradCheck, RejectsNondeterministicFunctions) {
  Parameter x("x", Tensor({64}, 1.0));
  std::mt19937_64 rng(1);
  std::vector<Parameter*> ps{&x};
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(dropout(t.param(x), 0.5, rng)); }, ps), std::logic_error);
}

TEST(Autodiff, SimpleValues) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor({1}, 0.0)))[0], 0.5);
  Var p = softmax(tape.constant(Tensor({5}, 3.7)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p[i], 0.2);
}

TEST(Autodiff, ConstantLossHasZeroGradients) {
  Parameter w("w", Tensor({2, 2}, 1.0));
  w.zero_grad();
  Tape tape;
  tape.param(w);
  tape.backward(sum(tape.constant(Tensor({3}, 2.0))));
  for (double g : w.grad.values) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, LinearLossGradientIsOuterProduct) {
  std::mt19937_64 rng(8);
  Parameter w("w", random_tensor({3, 4}, rng));
  const Tensor x = random_tensor({4}, rng);
  w.zero_grad();
  Tape tape;
  tape.backward(sum(matmul(tape.param(w), tape.constant(x))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(w.grad.at(i, j), x[j]);
  std::vector<Parameter*> ps{&w};
  EXPECT_LT(grad_check([&](Tape& t) { return sum(matmul(t.param(w), t.constant(x))); }, ps).max_relative_error, 1e-6);
}

TEST(GradCheck, QuadraticIsExact) {
  Parameter x("x", Tensor({3}, std::vector<double>{0.3, -1.2, 2.0}));
  std::vector<Parameter*> ps{&x};
  const auto r = grad_check([&](Tape& t) { Var v = t.param(x); return sum(scale(v * v, 3.0) + v); }, ps);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.coordinates, 3u);
}

TEST(AutodiffProperty, DropoutIsUnbiased) {
  std::mt19937_64 rng(17);
  Tape tape(false);
  Var x = tape.constant(Tensor({200000}, 2.0));
  Var d = dropout(x, 0.1, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) mean += d[i];
  mean /= static_cast<double>(d.size());
  EXPECT_NEAR(mean, 2.0, 0.02);
}
