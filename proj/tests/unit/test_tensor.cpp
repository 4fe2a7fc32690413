#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "rvi/error.hpp"
#include "rvi/random.hpp"
#include "rvi/tensor.hpp"

using namespace rvi;
using rvi::testing::describe;
using rvi::testing::worst_gradient_error;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

// Random values bounded away from zero (keeps FD probes off relu/abs kinks).
Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = 0.2, double hi = 1.5) {
  Rng rng(seed);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor b = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(vals(matmul(eye, b)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, UnitRowSelects) {
  const Tensor out = matmul(Tensor::matrix({{1, 0}}), Tensor::matrix({{2}, {5}}));
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.item(), 2.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 2}, 2);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double expected = b.at(k, 0) + b.at(k, 1);
      EXPECT_NEAR(a.grad()[i * 4 + k], expected, 1e-12);
    }
  }
  const auto worst = worst_gradient_error({a, b}, [&] { return sum(matmul(a, b)); });
  EXPECT_LT(worst.rel_err, 1e-6) << describe(worst);
}

TEST(Elementwise, ReluDefinition) {
  EXPECT_EQ(vals(relu(Tensor::vector({-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, ExpOfZero) { EXPECT_EQ(exp(Tensor::vector({0})).item(), 1.0); }

TEST(Elementwise, AbsGradientIsSign) {
  Tensor x = Tensor::vector({-3, 5}, true);
  sum(abs(x)).backward();
  EXPECT_EQ(grads(x), (std::vector<double>{-1, 1}));
}

TEST(Elementwise, ReluGradientAtZeroIsZero) {
  Tensor x = Tensor::vector({-1, 0, 3}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(grads(x), (std::vector<double>{0, 0, 1}));
}

TEST(Elementwise, LogAndSqrtRejectNegatives) {
  EXPECT_THROW(log(Tensor::vector({1, -1})), DomainError);
  EXPECT_THROW(sqrt(Tensor::vector({-0.5})), DomainError);
}

TEST(Elementwise, IncompatibleShapesRejected) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Elementwise, ScalarBroadcastsBothWays) {
  const Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(vals(add(t, Tensor::scalar(1))), (std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(vals(sub(Tensor::scalar(10), t)), (std::vector<double>{9, 8, 7, 6}));
}

TEST(Elementwise, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::size_t r = 1 + seed % 3;
    const std::size_t c = 2 + seed % 4;
    Tensor a = random_tensor({r, c}, 10 + seed);
    Tensor b = random_tensor({r, c}, 20 + seed);
    Tensor s = random_tensor({1}, 30 + seed);
    Tensor pos = random_tensor({r, c}, 40 + seed);
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
        {"add", [&] { return sum(mul(add(a, b), a)); }},
        {"sub", [&] { return sum(square(sub(a, b))); }},
        {"mul", [&] { return sum(mul(a, b)); }},
        {"scalar-mul", [&] { return sum(mul(a, s)); }},
        {"exp", [&] { return sum(exp(a)); }},
        {"log", [&] { return sum(log(square(pos))); }},
        {"relu", [&] { return sum(mul(relu(a), b)); }},
        {"square", [&] { return sum(square(a)); }},
        {"abs", [&] { return sum(mul(abs(a), b)); }},
        {"sqrt", [&] { return sum(sqrt(square(pos))); }},
        {"neg", [&] { return sum(mul(neg(a), b)); }},
        {"scale", [&] { return sum(scale(square(a), 0.3)); }},
        {"mean-axis", [&] {
           const std::size_t ax[] = {1};
           return sum(square(mean(a, ax)));
         }},
    };
    for (const auto& [name, f] : cases) {
      const auto worst = worst_gradient_error({a, b, s, pos}, f);
      EXPECT_LT(worst.rel_err, 1e-4) << name << ": " << describe(worst);
    }
  }
}

TEST(Reduce, SumAll) { EXPECT_EQ(sum(Tensor::matrix({{1, 2}, {3, 4}})).item(), 10.0); }

TEST(Reduce, MeanOfSingleton) { EXPECT_EQ(mean(Tensor::vector({5})).item(), 5.0); }

TEST(Reduce, AxisZeroSumGradientIsOnes) {
  Tensor t = random_tensor({2, 3}, 3);
  const std::size_t ax[] = {0};
  Tensor s = sum(t, ax);
  EXPECT_EQ(s.shape(), (Shape{3}));
  sum(s).backward();
  EXPECT_EQ(grads(t), std::vector<double>(6, 1.0));
}

TEST(Reduce, InvalidAxisRejected) {
  const std::size_t ax[] = {2};
  EXPECT_THROW(sum(Tensor::zeros({2, 3}), ax), DimensionError);
}

TEST(GatherRows, SelectsInOrder) {
  const Tensor t = Tensor::matrix({{1, 1}, {2, 2}, {3, 3}});
  const std::size_t idx[] = {2, 0};
  EXPECT_EQ(vals(gather_rows(t, idx)), (std::vector<double>{3, 3, 1, 1}));
}

TEST(GatherRows, EmptyIndexListGivesZeroRows) {
  const Tensor out = gather_rows(Tensor::zeros({3, 4}), {});
  EXPECT_EQ(out.shape(), (Shape{0, 4}));
}

TEST(GatherRows, OutOfRangeRejected) {
  const std::size_t idx[] = {3};
  EXPECT_THROW(gather_rows(Tensor::zeros({3, 2}), idx), IndexError);
}

TEST(GatherRows, ScatterTouchesSelectedRowsAndConservesMass) {
  Tensor t = random_tensor({4, 3}, 5);
  Tensor w = random_tensor({3, 3}, 6);
  const std::size_t idx[] = {1, 3, 1};
  Tensor out = mul(gather_rows(t, idx), w);
  sum(out).backward();
  const auto g = grads(t);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(g[0 * 3 + c], 0.0);
    EXPECT_EQ(g[2 * 3 + c], 0.0);
  }
  double incoming = 0.0;
  for (double v : w.values()) incoming += v;
  double scattered = 0.0;
  for (double v : g) scattered += v;
  EXPECT_NEAR(scattered, incoming, 1e-12);
  const auto worst = worst_gradient_error({t, w}, [&] { return sum(square(mul(gather_rows(t, idx), w))); });
  EXPECT_LT(worst.rel_err, 1e-4) << describe(worst);
}

TEST(BroadcastRows, GradientSumsOverRepeats) {
  Tensor row = random_tensor({1, 3}, 7);
  Tensor m = random_tensor({4, 3}, 8);
  const auto worst = worst_gradient_error({row, m}, [&] { return sum(square(add(m, broadcast_rows(row, 4)))); });
  EXPECT_LT(worst.rel_err, 1e-4) << describe(worst);
}

TEST(SoftmaxCrossEntropy, MatchesFiniteDifferencesAndClosedForm) {
  Tensor logits = random_tensor({3, 4}, 9);
  const std::vector<int> labels{0, 3, 1};
  const auto worst = worst_gradient_error({logits}, [&] { return softmax_cross_entropy(logits, labels); });
  EXPECT_LT(worst.rel_err, 1e-4) << describe(worst);
  const Tensor uniform = Tensor::zeros({2, 5});
  const std::vector<int> y{1, 4};
  EXPECT_NEAR(softmax_cross_entropy(uniform, y).item(), std::log(5.0), 1e-12);
}

TEST(Backward, SquareSumGradient) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  sum(square(x)).backward();
  EXPECT_EQ(grads(x), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ConstantLeafGetsNoGradient) {
  Tensor c = Tensor::scalar(4.0);
  c.backward();
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, NonScalarRootRejected) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  Tensor y = sum(square(x));
  y.backward(/*retain_graph=*/true);
  y.backward();
  EXPECT_EQ(grads(x), (std::vector<double>{4, 8, 12}));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::vector({2}, true);
  Tensor h = square(x);
  sum(add(h, h)).backward();  // d/dx 2x^2 = 4x
  EXPECT_EQ(grads(x), (std::vector<double>{8}));
}

TEST(Backward, CompositeMlpLossMatchesFiniteDifferences) {
  Tensor x = random_tensor({3, 4}, 11);
  Tensor w1 = random_tensor({4, 5}, 12);
  Tensor b1 = random_tensor({1, 5}, 13);
  Tensor w2 = random_tensor({5, 2}, 14);
  Tensor b2 = random_tensor({1, 2}, 15);
  Tensor target = Tensor(Shape{3, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
  auto loss = [&] {
    Tensor h = relu(add(matmul(x, w1), broadcast_rows(b1, 3)));
    Tensor y = add(matmul(h, w2), broadcast_rows(b2, 3));
    return mean(square(sub(y, target)));
  };
  const auto worst = worst_gradient_error({x, w1, b1, w2, b2}, loss);
  EXPECT_LT(worst.rel_err, 1e-4) << describe(worst);
}

TEST(NoGrad, GuardSuppressesGraph) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(square(x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.tracks_grad());
  y.backward();
  EXPECT_FALSE(x.has_grad());
}

TEST(Frozen, FrozenLeafActsAsConstant) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor w = Tensor::vector({3, 4}, true);
  w.set_frozen(true);
  sum(mul(x, w)).backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(w.has_grad());
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Tensor a = random_tensor({5, 5}, 16);
  Tensor b = random_tensor({5, 5}, 17);
  auto f = [&] { return exp(scale(matmul(relu(a), b), 0.1)); };
  EXPECT_EQ(value_checksum(f()), value_checksum(f()));
}

TEST(TensorShape, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_EQ(Tensor::zeros({2, 3}).numel(), 6u);
}
