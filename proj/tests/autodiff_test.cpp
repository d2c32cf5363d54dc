#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "jens/autodiff.hpp"
#include "jens/gradcheck.hpp"
#include "jens/rng.hpp"

using namespace jens;
using namespace jens::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Entries bounded away from zero so relu kinks stay out of reach of a 1e-4
// finite-difference step.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST(Primitives, ReluClampsNegatives) {
  Graph g;
  auto y = relu(g.constant(Tensor({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(y.value(), Tensor({3}, {0.0, 0.0, 2.0}));
}

TEST(Primitives, IdentityMatmul) {
  Graph g;
  Rng rng(3);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = matmul(g.constant(eye), g.constant(a));
  EXPECT_EQ(y.value(), a);
}

TEST(Primitives, ValidConvolutionOfOnes) {
  Graph g;
  auto y = conv2d(g.constant(Tensor::full({1, 1, 5, 5}, 1.0)),
                  g.constant(Tensor::full({1, 1, 3, 3}, 1.0)));
  EXPECT_EQ(y.value(), Tensor::full({1, 1, 3, 3}, 9.0));
}

TEST(Primitives, AvgPoolAveragesWindows) {
  Graph g;
  auto y = avgpool2d(g.constant(Tensor({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8})));
  EXPECT_EQ(y.value(), Tensor({1, 1, 1, 2}, {3.5, 5.5}));
}

TEST(Primitives, LogSoftmaxRowsNormalize) {
  Graph g;
  auto y = log_softmax(g.constant(Tensor({2, 3}, {1, 2, 3, -5, 0, 5})));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(y.value()[r * 3 + c]);
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(Primitives, ShapeMismatchThrows) {
  Graph g;
  auto a = g.constant(Tensor::zeros({2, 3}));
  auto b = g.constant(Tensor::zeros({2, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(gather_row(a, {0, 3}), ShapeError);
}

TEST(Primitives, NonFiniteInputAndOutputThrow) {
  Graph g;
  EXPECT_THROW(g.leaf(Tensor({1}, {std::nan("")})), NonFiniteError);
  auto z = g.constant(Tensor({1}, {0.0}));
  EXPECT_THROW(log(z), NonFiniteError);
}

TEST(Backward, SumOfSquares) {
  Graph g;
  auto w = g.leaf(Tensor({2}, {1.0, 2.0}));
  const Var leaves[] = {w};
  auto grads = backward(sum(square(w)), leaves, false);
  EXPECT_EQ(grads.value(w), Tensor({2}, {2.0, 4.0}));
}

TEST(Backward, LinearFormGivesInput) {
  Graph g;
  auto w = g.leaf(Tensor({3}, {0.5, -1.0, 2.0}));
  const Tensor x({3}, {3.0, 4.0, -7.0});
  const Var leaves[] = {w};
  auto grads = backward(sum(mul(w, g.constant(x))), leaves, false);
  EXPECT_EQ(grads.value(w), x);
}

TEST(Backward, DoubleBackwardOfCube) {
  auto cube_grad = [](double w0) {
    Graph g;
    auto w = g.leaf(Tensor::scalar(w0));
    const Var wrt[] = {w};
    auto d1 = grad(mul(w, mul(w, w)), wrt).front();
    auto d2 = grad_values(d1, wrt).front();
    return std::pair{d1.value().item(), d2.item()};
  };
  const auto [first, second] = cube_grad(2.0);
  EXPECT_DOUBLE_EQ(first, 12.0);
  EXPECT_DOUBLE_EQ(second, 12.0);

  // Nested central differences of w^3 at w=2.
  const double h = 1e-3;
  auto f = [](double w) { return w * w * w; };
  auto df = [&](double w) { return (f(w + h) - f(w - h)) / (2 * h); };
  const double nested = (df(2.0 + h) - df(2.0 - h)) / (2 * h);
  EXPECT_NEAR(second, nested, 1e-6);
}

TEST(Backward, UnreachableLeafGetsZero) {
  Graph g;
  auto used = g.leaf(Tensor({2}, {1.0, 2.0}));
  auto unused = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  const Var leaves[] = {used, unused};
  auto grads = backward(sum(used), leaves, true);
  EXPECT_EQ(grads.value(unused), Tensor::zeros({3}));
  EXPECT_TRUE(grads.node(unused).valid());
}

TEST(Backward, NonScalarOutputThrows) {
  Graph g;
  auto w = g.leaf(Tensor({2}, {1.0, 2.0}));
  const Var leaves[] = {w};
  EXPECT_THROW(backward(square(w), leaves, false), ShapeError);
}

TEST(Backward, DetachedGradientsRestoreGraphSize) {
  Graph g;
  auto w = g.leaf(Tensor({2}, {1.0, 2.0}));
  auto out = sum(square(w));
  const auto before = g.size();
  const Var leaves[] = {w};
  backward(out, leaves, false);
  EXPECT_EQ(g.size(), before);
}

TEST(Graph, ReplayReproducesOutputsBitForBit) {
  Rng rng(11);
  const Tensor x0 = random_tensor({3, 4}, rng);
  const Tensor w0 = random_tensor({4, 2}, rng);
  Graph g;
  auto x = g.leaf(x0);
  auto w = g.leaf(w0);
  auto loss = sum(square(relu(matmul(x, w))));
  const Var wrt[] = {w};
  auto gw = grad(loss, wrt).front();
  const Tensor loss_before = loss.value();
  const Tensor grad_before = gw.value();

  g.set_leaf_value(w, random_tensor({4, 2}, rng));
  g.replay();
  EXPECT_FALSE(loss.value() == loss_before);
  g.set_leaf_value(w, w0);
  g.replay();
  EXPECT_EQ(loss.value(), loss_before);
  EXPECT_EQ(gw.value(), grad_before);
}

TEST(Graph, IdenticalInputsBuildIdenticalGraphs) {
  auto build = [](Graph& g) {
    Rng rng(5);
    auto x = g.leaf(random_tensor({2, 3}, rng));
    auto w = g.leaf(random_tensor({3, 3}, rng));
    auto logits = matmul(x, w);
    auto rows = jacobian_rows(logits, x);
    Var total = frob_sq(rows[0]);
    for (std::size_t p = 1; p < rows.size(); ++p) total = add(total, frob_sq(rows[p]));
    return total;
  };
  Graph a, b;
  const auto ta = build(a);
  const auto tb = build(b);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.node(i).op, b.node(i).op);
    EXPECT_EQ(a.node(i).inputs, b.node(i).inputs);
    EXPECT_EQ(a.node(i).value, b.node(i).value);
  }
  EXPECT_EQ(ta.value(), tb.value());
}

// Every primitive, differentiated once and twice, against central
// differences. The loss sum(R * op(x)^2) keeps each op's adjoint on the path
// of the second derivative.
struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(std::span<const Var>)> op;
};

class PrimitiveGradients : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  Rng rng(2024);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  auto pos = [&](Shape s) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  std::vector<OpCase> cases;
  cases.push_back({"add", {r({2, 3}), r({2, 3})}, [](auto v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {r({2, 3}), r({2, 3})}, [](auto v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", {r({2, 3}), r({2, 3})}, [](auto v) { return mul(v[0], v[1]); }});
  cases.push_back({"scale", {r({4})}, [](auto v) { return scale(v[0], -1.7); }});
  cases.push_back({"matmul", {r({3, 4}), r({4, 2})}, [](auto v) { return matmul(v[0], v[1]); }});
  cases.push_back(
      {"matmul_nt", {r({3, 4}), r({2, 4})}, [](auto v) { return matmul(v[0], v[1], false, true); }});
  cases.push_back(
      {"matmul_tn", {r({4, 3}), r({4, 2})}, [](auto v) { return matmul(v[0], v[1], true, false); }});
  cases.push_back(
      {"matmul_tt", {r({4, 3}), r({2, 4})}, [](auto v) { return matmul(v[0], v[1], true, true); }});
  cases.push_back({"bias_add", {r({2, 3, 2, 2}), r({3})}, [](auto v) { return bias_add(v[0], v[1]); }});
  cases.push_back({"channel_sum", {r({2, 3, 2})}, [](auto v) { return channel_sum(v[0]); }});
  cases.push_back(
      {"channel_broadcast", {r({3})}, [](auto v) { return channel_broadcast(v[0], {2, 3, 2}); }});
  cases.push_back({"relu", {away_from_zero({3, 3}, rng)}, [](auto v) { return relu(v[0]); }});
  cases.push_back({"square", {r({5})}, [](auto v) { return square(v[0]); }});
  cases.push_back({"sum", {r({2, 3})}, [](auto v) { return sum(v[0]); }});
  cases.push_back({"mean", {r({2, 3})}, [](auto v) { return mean(v[0]); }});
  cases.push_back({"fill", {r({})}, [](auto v) { return fill(v[0], {2, 2}); }});
  cases.push_back({"log_softmax", {r({3, 4})}, [](auto v) { return log_softmax(v[0]); }});
  cases.push_back({"exp", {r({4})}, [](auto v) { return exp(v[0]); }});
  cases.push_back({"log", {pos({4})}, [](auto v) { return log(v[0]); }});
  cases.push_back({"reciprocal", {pos({4})}, [](auto v) { return reciprocal(v[0]); }});
  cases.push_back({"gather_row", {r({3, 4})}, [](auto v) { return gather_row(v[0], {1, 3, 0}); }});
  cases.push_back({"scatter_row", {r({3})}, [](auto v) { return scatter_row(v[0], {2, 0, 2}, 4); }});
  cases.push_back({"reshape", {r({2, 6})}, [](auto v) { return reshape(v[0], {3, 4}); }});
  cases.push_back({"flatten", {r({2, 2, 3})}, [](auto v) { return flatten(v[0]); }});
  cases.push_back({"conv2d", {r({2, 2, 5, 4}), r({3, 2, 3, 2})}, [](auto v) { return conv2d(v[0], v[1]); }});
  cases.push_back({"conv2d_input_grad", {r({2, 3, 3, 3}), r({3, 2, 3, 2})},
                   [](auto v) { return conv2d_input_grad(v[0], v[1], 5, 4); }});
  cases.push_back({"conv2d_kernel_grad", {r({2, 2, 5, 4}), r({2, 3, 3, 3})},
                   [](auto v) { return conv2d_kernel_grad(v[0], v[1], 3, 2); }});
  cases.push_back({"avgpool2d", {r({2, 2, 4, 4})}, [](auto v) { return avgpool2d(v[0]); }});
  cases.push_back({"avgpool2d_grad", {r({2, 2, 2, 2})}, [](auto v) { return avgpool2d_grad(v[0]); }});
  cases.push_back({"row_sum", {r({3, 4})}, [](auto v) { return row_sum(v[0]); }});
  cases.push_back({"row_broadcast", {r({3})}, [](auto v) { return row_broadcast(v[0], 2); }});
  cases.push_back({"slice0", {r({4, 2})}, [](auto v) { return slice0(v[0], 1, 3); }});
  cases.push_back({"pad0", {r({2, 2})}, [](auto v) { return pad0(v[0], 1, 4); }});
  cases.push_back({"concat0", {r({2, 3}), r({1, 3})}, [](auto v) { return concat0(v); }});
  return cases;
}

TEST_P(PrimitiveGradients, FirstAndSecondOrderMatchFiniteDifferences) {
  const auto cases = op_cases();
  const auto& c = cases.at(static_cast<std::size_t>(GetParam()));
  SCOPED_TRACE(c.name);
  Rng rng(99);
  Tensor out_shape_probe;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : c.inputs) vars.push_back(g.leaf(t));
    out_shape_probe = c.op(vars).value();
  }
  const Tensor weights = random_tensor(out_shape_probe.shape(), rng);
  LossFn loss = [&](Graph& g, std::span<const Var> params) {
    return sum(mul(g.constant(weights), square(c.op(params))));
  };
  GradCheckOptions opt;
  opt.tol = 1e-5;
  const auto report = check_gradients(c.inputs, loss, opt);
  EXPECT_TRUE(report.passed) << c.name << " first=" << report.first_order_error
                             << " second=" << report.second_order_error;
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGradients,
                         ::testing::Range(0, static_cast<int>(op_cases().size())));

TEST(FrobSq, KnownValues) {
  Graph g;
  EXPECT_DOUBLE_EQ(frob_sq(g.constant(Tensor({1, 2}, {3, 4}))).value().item(), 25.0);
  EXPECT_DOUBLE_EQ(frob_sq(g.constant(Tensor::zeros({2, 3}))).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(frob_sq(g.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}))).value().item(),
                   3.0);
}

TEST(GradCheck, QuadraticLossOnLinearModelIsTight) {
  Rng rng(1);
  const Tensor x = random_tensor({5, 3}, rng);
  const Tensor target = random_tensor({5, 2}, rng);
  const std::vector<Tensor> params = {random_tensor({3, 2}, rng)};
  LossFn loss = [&](Graph& g, std::span<const Var> p) {
    return sum(square(sub(matmul(g.constant(x), p[0]), g.constant(target))));
  };
  GradCheckOptions opt;
  opt.tol = 1e-7;
  const auto report = check_gradients(params, loss, opt);
  EXPECT_TRUE(report.passed) << report.max_rel_error();
  EXPECT_GT(report.max_rel_error(), 0.0);

  opt.tol = 0.0;
  EXPECT_FALSE(check_gradients(params, loss, opt).passed);
}
