#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "jens/binio.hpp"
#include "jens/models.hpp"

using namespace jens;

namespace {

Tensor random_batch(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<double> v(rows * dim);
  for (auto& x : v) x = rng.uniform();
  return Tensor({rows, dim}, std::move(v));
}

ModelParams zeroed(ModelParams m) {
  for (auto& p : m.params) p = Tensor::zeros(p.shape());
  return m;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const auto spec = ArchSpec::mlp(20, 4, {8});
  const auto a = init_params(spec, 7);
  const auto b = init_params(spec, 7);
  const auto c = init_params(spec, 8);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i], b.params[i]);
  EXPECT_FALSE(a.params[0] == c.params[0]);
}

TEST(InitParams, BiasesZeroWeightsWithinGlorotLimit) {
  const auto m = init_params(ArchSpec::mlp(30, 5, {10}), 1);
  for (std::size_t i = 1; i < m.params.size(); i += 2) {
    EXPECT_EQ(m.params[i], Tensor::zeros(m.params[i].shape()));
  }
  const double limit = std::sqrt(6.0 / 40.0);
  for (double v : m.params[0].data()) EXPECT_LE(std::abs(v), limit);
}

TEST(InitParams, RejectsInvalidSpec) {
  EXPECT_THROW(init_params(ArchSpec::mlp(10, 1), 0), InvalidSpec);
  EXPECT_THROW(init_params(ArchSpec::mlp(10, 3, {0}), 0), InvalidSpec);
  EXPECT_THROW(init_params(ArchSpec::lenet(10, 27), 0), InvalidSpec);
}

TEST(LeNet, ProducesTenLogitsOn28x28) {
  const auto m = init_params(ArchSpec::lenet(10), 3);
  Rng rng(1);
  const auto logits = forward_logits(m, random_batch(2, 784, rng));
  EXPECT_EQ(logits.shape(), (Shape{2, 10}));
}

TEST(LeNet, ParameterCountRegression) {
  // conv 6x1x5x5+6, conv 16x6x5x5+16, dense 256x120+120, 120x84+84, 84x10+10
  const auto m = init_params(ArchSpec::lenet(10), 0);
  EXPECT_EQ(m.parameter_count(), 44426u);
}

TEST(ForwardLogits, ZeroWeightsGiveZeroLogits) {
  const auto m = zeroed(init_params(ArchSpec::mlp(6, 3, {4}), 0));
  Rng rng(2);
  EXPECT_EQ(forward_logits(m, random_batch(3, 6, rng)), Tensor::zeros({3, 3}));
}

TEST(ForwardLogits, BatchRowsAreIndependent) {
  const auto m = init_params(ArchSpec::mlp(6, 3, {5}), 4);
  Rng rng(9);
  const auto batch = random_batch(2, 6, rng);
  const auto both = forward_logits(m, batch);
  ad::Graph g;
  const auto second = forward_logits(m, ad::slice0(g.constant(batch), 1, 2).value());
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(second[j], both[3 + j]);
}

TEST(ForwardLogits, HandComputedTinyMlp) {
  // x=(1,2); h = relu(x W1 + b1) with W1=[[1,-1],[0.5,-2]], b1=(0,1)
  // -> pre=(2,-4) -> h=(2,0); logits = h W2 + b2, W2=[[1,2],[3,4]], b2=(0.5,-0.5)
  // -> (2.5, 3.5)
  ModelParams m;
  m.spec = ArchSpec::mlp(2, 2, {2});
  m.params = {Tensor({2, 2}, {1, -1, 0.5, -2}), Tensor({2}, {0, 1}),
              Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {0.5, -0.5})};
  EXPECT_EQ(forward_logits(m, Tensor({1, 2}, {1, 2})), Tensor({1, 2}, {2.5, 3.5}));
}

TEST(ForwardLogits, ShapeMismatchThrows) {
  const auto m = init_params(ArchSpec::mlp(6, 3, {4}), 0);
  EXPECT_THROW(forward_logits(m, Tensor::zeros({2, 5})), ShapeError);
}

TEST(ForwardLogits, PermutingRowsPermutesOutputs) {
  const auto m = init_params(ArchSpec::mlp(5, 4, {6, 3}), 5);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng.index(6);
    const auto batch = random_batch(rows, 5, rng);
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> permuted;
    for (auto r : perm)
      for (std::size_t j = 0; j < 5; ++j) permuted.push_back(batch[r * 5 + j]);
    const auto out = forward_logits(m, batch);
    const auto out_p = forward_logits(m, Tensor({rows, 5}, permuted));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out_p[i * 4 + j], out[perm[i] * 4 + j]);
  }
}

TEST(Predict, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(argmax_rows(Tensor({1, 3}, {0.1, 0.9, 0.2})), (std::vector<std::size_t>{1}));
  EXPECT_EQ(argmax_rows(Tensor({1, 4}, {0.3, 0.3, 0.3, 0.3})), (std::vector<std::size_t>{0}));
  EXPECT_EQ(argmax_rows(Tensor({1, 3}, {0.1, 0.7, 0.7})), (std::vector<std::size_t>{1}));
}

TEST(Predict, MatchesArgmaxOfLogits) {
  const auto m = init_params(ArchSpec::mlp(8, 5, {6}), 2);
  Rng rng(3);
  const auto batch = random_batch(16, 8, rng);
  EXPECT_EQ(predict(m, batch), argmax_rows(forward_logits(m, batch)));
}

TEST(Jacobian, LinearModelGivesWeights) {
  ModelParams m = init_params(ArchSpec::mlp(5, 3, {}), 11);
  Rng rng(4);
  const auto j = jacobian_exact(m, random_batch(1, 5, rng));
  ASSERT_EQ(j.shape(), (Shape{3, 5}));
  // The stored weight is [D, C]; J is its transpose.
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = 0; q < 5; ++q) EXPECT_NEAR(j[p * 5 + q], m.params[0][q * 3 + p], 1e-12);
}

TEST(Jacobian, MatchesCentralDifferencesOnTwoLayerMlp) {
  const auto m = init_params(ArchSpec::mlp(4, 3, {7}), 21);
  Rng rng(8);
  const auto x = random_batch(1, 4, rng);
  const auto j = jacobian_exact(m, x);
  const double h = 1e-4;
  double max_rel = 0.0;
  for (std::size_t q = 0; q < 4; ++q) {
    auto up = x.to_vector();
    auto down = x.to_vector();
    up[q] += h;
    down[q] -= h;
    const auto fu = forward_logits(m, Tensor({1, 4}, up));
    const auto fd = forward_logits(m, Tensor({1, 4}, down));
    for (std::size_t p = 0; p < 3; ++p) {
      const double numeric = (fu[p] - fd[p]) / (2 * h);
      const double analytic = j[p * 4 + q];
      max_rel = std::max(max_rel, std::abs(numeric - analytic) /
                                      (std::max(std::abs(numeric), std::abs(analytic)) + 1e-12));
    }
  }
  EXPECT_LE(max_rel, 1e-5);
}

TEST(Jacobian, FrobeniusEqualsSumOfRowNorms) {
  const auto m = init_params(ArchSpec::mlp(6, 4, {5}), 6);
  Rng rng(12);
  const auto x = random_batch(1, 6, rng);
  const auto j = jacobian_exact(m, x);
  double rows = 0.0;
  for (std::size_t p = 0; p < 4; ++p) {
    double r = 0.0;
    for (std::size_t q = 0; q < 6; ++q) r += j[p * 6 + q] * j[p * 6 + q];
    rows += r;
  }
  ad::Graph g;
  auto frob = ad::frob_sq(g.constant(j)).value().item();
  EXPECT_NEAR(frob, rows, 1e-14);

  // The batched C-pass form agrees with the single-input Jacobian.
  auto bound = bind_params(g, m, false);
  auto xv = g.leaf(x);
  EXPECT_NEAR(jacobian_frob_sq_sum(forward_logits(bound, xv), xv).value().item(), frob, 1e-12);
}

TEST(Jacobian, ExactJacobianStaysParameterDifferentiable) {
  const auto m = init_params(ArchSpec::mlp(3, 2, {4}), 13);
  Rng rng(5);
  const auto x = random_batch(1, 3, rng);
  // ||J||^2 is quartic in the weights; second differences carry O(h^2)
  // truncation error, hence the looser tolerance.
  ad::GradCheckOptions opt;
  opt.tol = 1e-4;
  const auto report = check_gradients(
      m,
      [&](const BoundModel& b) {
        auto xv = b.params.front().graph().leaf(x);
        return ad::frob_sq(jacobian_exact(b, xv));
      },
      opt);
  EXPECT_TRUE(report.passed) << report.first_order_error << " " << report.second_order_error;
}

TEST(FrobEstimate, BasisProjectionPicksOneRow) {
  const auto m = init_params(ArchSpec::mlp(5, 3, {4}), 14);
  Rng rng(6);
  const auto x = random_batch(1, 5, rng);
  const auto j = jacobian_exact(m, x);
  for (std::size_t p = 0; p < 3; ++p) {
    ad::Graph g;
    auto bound = bind_params(g, m, false);
    auto xv = g.leaf(x);
    std::vector<double> e(3, 0.0);
    e[p] = 1.0;
    const Tensor proj[] = {Tensor({1, 3}, e)};
    const double est = jacobian_frob_sq_projected(forward_logits(bound, xv), xv, proj).value().item();
    double row = 0.0;
    for (std::size_t q = 0; q < 5; ++q) row += j[p * 5 + q] * j[p * 5 + q];
    EXPECT_NEAR(est, 3.0 * row, 1e-12);
  }
}

TEST(FrobEstimate, UnbiasedOnLinearModel) {
  const auto m = init_params(ArchSpec::mlp(6, 4, {}), 15);
  Rng data_rng(7);
  const auto x = random_batch(1, 6, data_rng);
  const auto j = jacobian_exact(m, x);
  double exact = 0.0;
  for (double v : j.data()) exact += v * v;

  // Per-projection terms C * ||v^T J||^2 from an independent path: v drawn
  // the same way, product formed directly against J.
  constexpr std::size_t kDraws = 10000;
  Rng rng(99);
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < kDraws; ++k) {
    const auto v = random_unit_rows(1, 4, rng);
    double norm = 0.0;
    for (std::size_t q = 0; q < 6; ++q) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 4; ++p) acc += v[p] * j[p * 6 + q];
      norm += acc * acc;
    }
    s += 4.0 * norm;
    s2 += 16.0 * norm * norm;
  }
  const double mean = s / kDraws;
  const double se = std::sqrt((s2 / kDraws - mean * mean) / kDraws);

  ad::Graph g;
  auto bound = bind_params(g, m, false);
  auto xv = g.leaf(x);
  const double est = frob_sq_estimate(bound, xv, kDraws, 99).value().item();
  EXPECT_NEAR(est, mean, 1e-9 * exact);
  EXPECT_LE(std::abs(est - exact), 3.0 * se);
  EXPECT_LE(std::abs(mean - exact), 4.0 * se);
}

TEST(GradCheck, ModelQuadraticLossAndZeroTolerance) {
  const auto m = init_params(ArchSpec::mlp(4, 3, {}), 16);
  Rng rng(10);
  const auto x = random_batch(6, 4, rng);
  const auto target = random_batch(6, 3, rng);
  ModelLossFn loss = [&](const BoundModel& b) {
    auto& g = b.params.front().graph();
    return ad::sum(ad::square(ad::sub(forward_logits(b, g.constant(x)), g.constant(target))));
  };
  ad::GradCheckOptions opt;
  opt.tol = 1e-7;
  EXPECT_TRUE(check_gradients(m, loss, opt).passed);
  opt.tol = 0.0;
  EXPECT_FALSE(check_gradients(m, loss, opt).passed);
}

TEST(ModelFile, RoundTripIsBitExact) {
  for (const auto& spec : {ArchSpec::mlp(12, 3, {5, 4}), ArchSpec::lenet(10)}) {
    const auto m = init_params(spec, 31);
    const auto bytes = serialize_model(m);
    EXPECT_EQ(bytes.substr(0, 4), "JENS");
    const auto back = deserialize_model(bytes);
    EXPECT_EQ(back.spec, m.spec);
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(back.params[i], m.params[i]);
    EXPECT_EQ(serialize_model(back), bytes);
  }
}

TEST(ModelFile, SaveLoadThroughDisk) {
  const auto m = init_params(ArchSpec::mlp(7, 2, {3}), 32);
  const auto path = std::filesystem::temp_directory_path() / "jens_models_test.jens";
  save_model(m, path);
  const auto back = load_model(path);
  EXPECT_EQ(serialize_model(back), serialize_model(m));
  std::filesystem::remove(path);
}

TEST(ModelFile, RejectsCorruptInput) {
  const auto bytes = serialize_model(init_params(ArchSpec::mlp(7, 2, {3}), 33));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), binio::FormatError);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 3)), binio::FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_model(bad_version), binio::FormatError);
}
