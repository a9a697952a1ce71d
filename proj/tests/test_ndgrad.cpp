#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "rangeaug/ndgrad.hpp"
#include "rangeaug/parallel.hpp"

using rangeaug::nd::Array;
using rangeaug::nd::ContractError;
using rangeaug::nd::Graph;
using rangeaug::nd::NodeId;
using rangeaug::nd::Shape;
using rangeaug::nd::ShapeError;

namespace {

Array random_array(const Shape& shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Array a(shape);
  for (auto& v : a.values()) v = dist(gen);
  return a;
}

}  // namespace

TEST(Array, RejectsEmptyAndZeroAxes) {
  EXPECT_THROW(Array(Shape{}), ShapeError);
  EXPECT_THROW(Array(Shape{3, 0}), ShapeError);
  EXPECT_THROW(Array(Shape{2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
}

TEST(Array, ItemOnlyForScalars) {
  EXPECT_DOUBLE_EQ(Array::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Array(Shape{2}).item(), ShapeError);
}

TEST(Array, ReshapeKeepsData) {
  const Array a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Array b = a.reshaped(Shape{3, 2});
  EXPECT_EQ(b.shape(), (Shape{3, 2}));
  EXPECT_EQ(b.vec(), a.vec());
  EXPECT_THROW(a.reshaped(Shape{4}), ShapeError);
}

TEST(PairwiseSum, MatchesLongDoubleReference) {
  std::mt19937_64 gen(3);
  for (std::size_t n : {1u, 7u, 8u, 9u, 100u, 1025u}) {
    std::vector<double> v(n);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    long double ref = 0.0L;
    for (auto& x : v) {
      x = dist(gen);
      ref += x;
    }
    EXPECT_NEAR(rangeaug::nd::pairwise_sum(v), static_cast<double>(ref), 1e-12) << n;
  }
}

TEST(Graph, AddOfScalarAndArrayBroadcasts) {
  Graph g;
  const NodeId x = g.leaf(Array(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  const NodeId s = g.leaf(Array::scalar(10.0));
  const NodeId y = g.add(s, x);
  EXPECT_EQ(g.value(y).vec(), (std::vector<double>{11, 12, 13, 14}));
  const auto grads = g.backward(g.sum(y));
  EXPECT_DOUBLE_EQ(grads.at(s).item(), 4.0);
  EXPECT_EQ(grads.at(x).vec(), (std::vector<double>(4, 1.0)));
}

TEST(Graph, ShapeMismatchNamesPrimitiveAndShapes) {
  Graph g;
  const NodeId a = g.leaf(Array(Shape{2, 3}));
  const NodeId b = g.leaf(Array(Shape{3, 2}));
  try {
    g.add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(g.matmul(a, a), ShapeError);
}

TEST(Graph, LogRejectsNonPositive) {
  Graph g;
  const NodeId x = g.leaf(Array::from({1.0, 0.0}));
  EXPECT_THROW(g.log(x), std::domain_error);
  EXPECT_THROW(g.log10(g.leaf(Array::scalar(-1.0))), std::domain_error);
}

TEST(Graph, BackwardNeedsScalarLoss) {
  Graph g;
  const NodeId x = g.leaf(Array(Shape{3}, 1.0));
  EXPECT_THROW(g.backward(g.square(x)), ContractError);
}

TEST(Graph, SquareGradientIsTwoX) {
  Graph g;
  const NodeId x = g.leaf(Array::from({-1.5, 0.0, 2.0}));
  const auto grads = g.backward(g.sum(g.square(x)));
  EXPECT_EQ(grads.at(x).vec(), (std::vector<double>{-3.0, 0.0, 4.0}));
}

TEST(Graph, ClampSubgradientIsZeroAtAndOutsideBounds) {
  Graph g;
  const NodeId x = g.leaf(Array::from({-0.5, 0.0, 0.5, 1.0, 1.5}));
  const auto grads = g.backward(g.sum(g.clamp(x, 0.0, 1.0)));
  EXPECT_EQ(grads.at(x).vec(), (std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.0}));
}

TEST(Graph, ReluAndAbsAtZero) {
  Graph g;
  const NodeId x = g.leaf(Array::from({-2.0, 0.0, 3.0}));
  const NodeId y = g.abs(x);
  EXPECT_EQ(g.value(y).vec(), (std::vector<double>{2.0, 0.0, 3.0}));
  const auto grads = g.backward(g.sum(y));
  EXPECT_EQ(grads.at(x).vec(), (std::vector<double>{-1.0, 0.0, 1.0}));
}

TEST(Graph, MeanGradientIsUniform) {
  Graph g;
  const NodeId x = g.leaf(Array(Shape{4, 5}, 3.0));
  const auto grads = g.backward(g.mean(x));
  for (double v : grads.at(x).values()) EXPECT_DOUBLE_EQ(v, 1.0 / 20.0);
}

TEST(Graph, MatmulMatchesNaiveProduct) {
  std::mt19937_64 gen(11);
  const Array a = random_array(Shape{5, 7}, gen);
  const Array b = random_array(Shape{7, 3}, gen);
  Graph g;
  const NodeId c = g.matmul(g.leaf(a), g.leaf(b));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 7; ++p) s += a[i * 7 + p] * b[p * 3 + j];
      EXPECT_NEAR(g.value(c)[i * 3 + j], s, 1e-14);
    }
  }
}

TEST(Graph, SoftmaxCrossEntropyMatchesDirectFormula) {
  const Array logits(Shape{2, 3}, std::vector<double>{1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const std::vector<std::size_t> labels{1, 0};
  Graph g;
  const NodeId z = g.leaf(logits);
  const NodeId loss = g.softmax_cross_entropy(z, labels);
  double expect = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 3; ++j) denom += std::exp(logits[i * 3 + j]);
    expect += -(logits[i * 3 + labels[i]] - std::log(denom));
  }
  EXPECT_NEAR(g.value(loss).item(), expect / 2.0, 1e-14);
  EXPECT_THROW(g.softmax_cross_entropy(z, std::vector<std::size_t>{0, 3}), std::out_of_range);
}

TEST(Graph, DetachBlocksGradient) {
  Graph g;
  const NodeId x = g.leaf(Array::scalar(3.0));
  const NodeId y = g.add(g.square(g.detach(x)), x);
  const auto grads = g.backward(y);
  EXPECT_DOUBLE_EQ(grads.at(x).item(), 1.0);
}

TEST(Graph, BackwardOnlyReturnsRequestedLeaves) {
  Graph g;
  const NodeId x = g.leaf(Array::scalar(2.0));
  const NodeId w = g.leaf(Array::scalar(5.0));
  const NodeId loss = g.mul(x, w);
  const NodeId wrt[] = {x};
  const auto grads = g.backward(loss, wrt);
  EXPECT_TRUE(grads.contains(x));
  EXPECT_FALSE(grads.contains(w));
  EXPECT_DOUBLE_EQ(grads.at(x).item(), 5.0);
}

TEST(Graph, RepeatedBackwardIsIdentical) {
  Graph g;
  const NodeId x = g.leaf(Array::from({0.3, -0.7, 1.1}));
  const NodeId loss = g.sum(g.mul(g.square(x), x));
  const auto first = g.backward(loss);
  const auto second = g.backward(loss);
  EXPECT_EQ(first.at(x).vec(), second.at(x).vec());
}

// Backward is linear in the loss: grad(a f + b h) == a grad f + b grad h.
TEST(GraphProperty, BackwardIsLinearInTheLoss) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Array xv = random_array(Shape{6}, gen, 0.2, 2.0);
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    const double a = coef(gen);
    const double b = coef(gen);
    Graph g;
    const NodeId x = g.leaf(xv);
    const NodeId f = g.sum(g.mul(g.square(x), x));
    const NodeId h = g.mean(g.log(x));
    const NodeId combo = g.add(g.mul_scalar(f, a), g.mul_scalar(h, b));
    const auto gf = g.backward(f);
    const auto gh = g.backward(h);
    const auto gc = g.backward(combo);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(gc.at(x)[i], a * gf.at(x)[i] + b * gh.at(x)[i], 1e-12);
    }
  }
}

// Random compositions of smooth primitives against central differences.
TEST(GraphProperty, RandomGraphsMatchFiniteDifferences) {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<int> pick(0, 6);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int> ops(4);  // deeper square chains overflow the FD round-off budget
    for (auto& o : ops) o = pick(gen);
    const Array p0 = random_array(Shape{3, 4}, gen, 0.5, 1.5);
    const Array p1 = random_array(Shape{4, 2}, gen, -1.0, 1.0);
    const Array p2 = random_array(Shape{1}, gen, 0.5, 1.5);
    const Array point[] = {p0, p1, p2};
    auto build = [&](Graph& g, std::span<const NodeId> leaves) {
      NodeId x = leaves[0];
      for (int o : ops) {
        switch (o) {
          case 0: x = g.mul(x, leaves[2]); break;
          case 1: x = g.add_scalar(g.square(x), 0.5); break;
          case 2: x = g.log(g.add_scalar(g.square(x), 1.0)); break;
          case 3: x = g.sub(x, g.mul_scalar(leaves[2], 0.3)); break;
          case 4: x = g.add(x, g.mul(x, x)); break;
          case 5: x = g.mul_scalar(x, -0.7); break;
          default: x = g.add(x, leaves[2]); break;
        }
      }
      const NodeId y = g.matmul(x, leaves[1]);
      return g.mean(g.square(y));
    };
    const auto report = rangeaug::nd::finite_difference_check(build, point, 1e-5);
    EXPECT_LE(report.max_rel_err, 1e-5) << "trial " << trial;
    EXPECT_EQ(report.coordinates, 12u + 8u + 1u);
  }
}

TEST(GraphProperty, ClassifierShapedGraphMatchesFiniteDifferences) {
  std::mt19937_64 gen(23);
  const Array x = random_array(Shape{4, 5}, gen);
  const Array w1 = random_array(Shape{5, 6}, gen);
  const Array b1 = random_array(Shape{6}, gen);
  const Array w2 = random_array(Shape{6, 3}, gen);
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  const Array point[] = {x, w1, b1, w2};
  auto build = [&](Graph& g, std::span<const NodeId> l) {
    const NodeId h = g.relu(g.add_row_vector(g.matmul(l[0], l[1]), l[2]));
    return g.softmax_cross_entropy(g.matmul(h, l[3]), labels);
  };
  const auto report = rangeaug::nd::finite_difference_check(build, point, 1e-6);
  EXPECT_LE(report.max_rel_err, 1e-5);
}

TEST(GraphProperty, FiniteDifferenceSkipsKinkCrossings) {
  // relu at exactly 0 changes branch under either probe; the coordinate is
  // excluded instead of reported as a mismatch.
  const Array point[] = {Array::from({0.0, 1.0})};
  auto build = [](Graph& g, std::span<const NodeId> l) { return g.sum(g.relu(l[0])); };
  const auto report = rangeaug::nd::finite_difference_check(build, point, 1e-3);
  EXPECT_EQ(report.excluded, 1u);
  EXPECT_EQ(report.coordinates, 2u);
  EXPECT_LE(report.max_rel_err, 1e-9);
}

TEST(GraphProperty, ValuesAndGradientsIndependentOfThreadCount) {
  std::mt19937_64 gen(29);
  const Array a = random_array(Shape{67, 129}, gen);
  const Array b = random_array(Shape{129, 33}, gen);
  auto run = [&](std::size_t threads) {
    rangeaug::set_num_threads(threads);
    Graph g;
    const NodeId x = g.leaf(a);
    const NodeId w = g.leaf(b);
    const NodeId loss = g.mean(g.square(g.matmul(x, w)));
    auto grads = g.backward(loss);
    return std::vector<Array>{g.value(loss), grads.at(x), grads.at(w)};
  };
  const auto one = run(1);
  const auto four = run(4);
  const auto seven = run(7);
  rangeaug::reset_num_threads_from_env();
  EXPECT_EQ(one, four);
  EXPECT_EQ(one, seven);
}
