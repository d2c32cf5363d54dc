#include "jens/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace jens;

namespace {

// Cross-entropy computed straight from logits with a stable log-sum-exp.
double ce_oracle(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -1e300;
    for (std::size_t k = 0; k < cols; ++k) mx = std::max(mx, logits[i * cols + k]);
    double s = 0.0;
    for (std::size_t k = 0; k < cols; ++k) s += std::exp(logits[i * cols + k] - mx);
    total += mx + std::log(s) - logits[i * cols + labels[i]];
  }
  return total / static_cast<double>(rows);
}

double frob_sq(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

Tensor row(const Tensor& x, std::size_t i) {
  const std::size_t d = x.dim(1);
  std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                        x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  return Tensor({1, d}, std::move(v));
}

JointLoss loss_on_graph(ad::Graph& g, const ModelParams& m, const Tensor& x,
                        const std::vector<std::size_t>& labels, double lambda) {
  auto bound = bind_params(g, m, true);
  return joint_loss(bound, g.leaf(x), labels, lambda);
}

struct Fixture {
  ModelParams model = init_params(ArchSpec::mlp(5, 3, {4}), 17);
  Tensor x;
  std::vector<std::size_t> labels{2, 0};
  Fixture() {
    Rng rng(3);
    std::vector<double> v(10);
    for (auto& e : v) e = rng.uniform();
    x = Tensor({2, 5}, v);
  }
};

}  // namespace

TEST(JointLoss, LambdaZeroIsCrossEntropy) {
  Fixture f;
  ad::Graph g;
  auto terms = loss_on_graph(g, f.model, f.x, f.labels, 0.0);
  EXPECT_EQ(terms.total.value().item(), terms.ce.value().item());
  EXPECT_EQ(terms.jr.value().item(), 0.0);
  const double oracle = ce_oracle(forward_logits(f.model, f.x), f.labels);
  EXPECT_NEAR(terms.ce.value().item(), oracle, 1e-14);
}

TEST(JointLoss, MatchesHandAssembledObjective) {
  Fixture f;
  const double lambda = 1.0;
  double jr = 0.0;
  for (std::size_t i = 0; i < 2; ++i) jr += frob_sq(jacobian_exact(f.model, row(f.x, i)));
  const double expected =
      ce_oracle(forward_logits(f.model, f.x), f.labels) + lambda / 2.0 * jr / 2.0;
  ad::Graph g;
  const double got = loss_on_graph(g, f.model, f.x, f.labels, lambda).total.value().item();
  EXPECT_LE(std::abs(got - expected) / std::abs(expected), 1e-10);
}

TEST(JointLoss, ZeroWeightModelHasNoJacobianPenalty) {
  auto model = init_params(ArchSpec::mlp(4, 3, {}), 1);
  for (auto& p : model.params) p = Tensor::zeros(p.shape());
  ad::Graph g;
  auto terms = loss_on_graph(g, model, Tensor::full({3, 4}, 0.5), {0, 1, 2}, 5.0);
  EXPECT_EQ(terms.jr.value().item(), 0.0);
  EXPECT_NEAR(terms.total.value().item(), std::log(3.0), 1e-15);
}

TEST(JointLoss, LinearInLambdaWithSlopeHalfMeanFrob) {
  Fixture f;
  double mean_frob = 0.0;
  for (std::size_t i = 0; i < 2; ++i) mean_frob += frob_sq(jacobian_exact(f.model, row(f.x, i))) / 2;
  ad::Graph g;
  const double l1 = loss_on_graph(g, f.model, f.x, f.labels, 0.3).total.value().item();
  const double l2 = loss_on_graph(g, f.model, f.x, f.labels, 1.7).total.value().item();
  const double slope = (l2 - l1) / 1.4;
  EXPECT_GE(slope, 0.0);
  EXPECT_NEAR(slope, mean_frob / 2.0, 1e-10 * mean_frob);
}

TEST(JointLoss, ProjectionModeRequiresRng) {
  Fixture f;
  ad::Graph g;
  auto bound = bind_params(g, f.model, true);
  EXPECT_THROW(joint_loss(bound, g.leaf(f.x), f.labels, 1.0, JacobianMode::kProjection, 2, nullptr),
               std::invalid_argument);
  Rng rng(1);
  auto terms = joint_loss(bound, g.leaf(f.x), f.labels, 1.0, JacobianMode::kProjection, 2, &rng);
  EXPECT_GT(terms.jr.value().item(), 0.0);
}

TEST(JointLoss, GradientsPassFiniteDifferenceCheck) {
  Fixture f;
  auto x = f.x;
  auto labels = f.labels;
  auto report = check_gradients(
      f.model,
      [&](const BoundModel& bound) {
        auto& g = bound.params.front().graph();
        return joint_loss(bound, g.leaf(x), labels, 1.0).total;
      },
      {.tol = 1e-4});
  EXPECT_TRUE(report.passed) << report.first_order_error << " " << report.second_order_error;
  EXPECT_LE(report.max_rel_error(), 1e-4);
}

TEST(Optimizer, SgdWithoutMomentumIsPlainStep) {
  std::vector<Tensor> params{Tensor({2}, {1.0, -2.0})};
  std::vector<Tensor> grads{Tensor({2}, {0.5, 3.0})};
  OptimizerState state;
  OptimizerConfig hyper{.kind = OptimizerKind::kSgd, .lr = 0.1, .momentum = 0.0};
  optimizer_step(params, grads, state, hyper, 0.1);
  EXPECT_DOUBLE_EQ(params[0][0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(params[0][1], -2.0 - 0.3);
  std::vector<Tensor> zeros{Tensor::zeros({2})};
  const auto before = params[0];
  optimizer_step(params, zeros, state, hyper, 0.1);
  EXPECT_EQ(params[0], before);
}

TEST(Optimizer, SgdMomentumAccumulates) {
  std::vector<Tensor> params{Tensor({1}, {0.0})};
  std::vector<Tensor> grads{Tensor({1}, {1.0})};
  OptimizerState state;
  OptimizerConfig hyper{.kind = OptimizerKind::kSgd, .lr = 1.0, .momentum = 0.9};
  optimizer_step(params, grads, state, hyper, 1.0);
  optimizer_step(params, grads, state, hyper, 1.0);
  EXPECT_DOUBLE_EQ(params[0][0], -(1.0 + 1.9));
}

TEST(Optimizer, AdamFirstStepIsLearningRateSized) {
  std::vector<Tensor> params{Tensor({3}, {0.0, 0.0, 0.0})};
  std::vector<Tensor> grads{Tensor({3}, {2.0, -0.01, 1e3})};
  OptimizerState state;
  OptimizerConfig hyper;  // adam
  optimizer_step(params, grads, state, hyper, 1e-3);
  for (std::size_t k = 0; k < 3; ++k) {
    const double g = grads[0][k];
    const double expected = -1e-3 * g / (std::abs(g) + hyper.eps);
    EXPECT_NEAR(params[0][k], expected, 1e-15);
    EXPECT_NEAR(std::abs(params[0][k]), 1e-3, 1e-8);
  }
}

TEST(Optimizer, ShapeMismatchThrows) {
  std::vector<Tensor> params{Tensor::zeros({2})};
  std::vector<Tensor> bad{Tensor::zeros({3})};
  std::vector<Tensor> none;
  OptimizerState state;
  EXPECT_THROW(optimizer_step(params, bad, state, {}, 0.1), ShapeError);
  EXPECT_THROW(optimizer_step(params, none, state, {}, 0.1), ShapeError);
}

TEST(Schedule, CyclicCosineShape) {
  TrainConfig cfg;
  cfg.schedule = LrSchedule::kCyclicCosine;
  cfg.cycles = 3;
  cfg.optimizer.lr = 0.2;
  EXPECT_EQ(cycle_length(10, 3), 4u);
  EXPECT_EQ(cycle_length(9, 3), 3u);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 0, 12), 0.2);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 2, 12), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 4, 12), 0.2);
  EXPECT_NEAR(scheduled_lr(cfg, 3, 12), 0.1 * (std::cos(std::numbers::pi * 0.75) + 1), 1e-16);
  cfg.schedule = LrSchedule::kConstant;
  EXPECT_EQ(scheduled_lr(cfg, 7, 12), 0.2);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lambda_jr = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.schedule = LrSchedule::kCyclicCosine;
  cfg.cycles = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(TrainConfig::defaults_for(Arch::kLeNet).optimizer.kind, OptimizerKind::kSgd);
  EXPECT_EQ(TrainConfig::defaults_for(Arch::kLeNet).optimizer.lr, 0.05);
  EXPECT_EQ(TrainConfig::defaults_for(Arch::kMlp).optimizer.kind, OptimizerKind::kAdam);
  EXPECT_EQ(TrainConfig::defaults_for(Arch::kMlp).optimizer.lr, 1e-3);
  EXPECT_EQ(parse_schedule("cyclic_cosine"), LrSchedule::kCyclicCosine);
  EXPECT_THROW(parse_optimizer("rmsprop"), std::invalid_argument);
}

TEST(Train, LinearModelSeparatesWellSeparatedBlobs) {
  auto ds = synthetic_blobs(400, 16, 2, 4, {.base = 0.2, .separation = 0.6, .spread = 0.1});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.optimizer.lr = 0.05;
  auto result = train(ArchSpec::mlp(16, 2, {}), ds, cfg);
  EXPECT_GE(accuracy(result.model, ds), 0.99);
}

TEST(Train, MlpFitsBlobsInFiveEpochs) {
  auto ds = synthetic_blobs(500, 36, 4, 8);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 25;
  cfg.optimizer.lr = 0.01;
  auto result = train(ArchSpec::mlp(36, 4, {16}), ds, cfg);
  EXPECT_GE(accuracy(result.model, ds), 0.99);
  ASSERT_EQ(result.record.epochs.size(), 5u);
  for (const auto& e : result.record.epochs) EXPECT_EQ(e.jr_term, 0.0);
  EXPECT_LT(result.record.epochs.back().loss, result.record.epochs.front().loss);
  EXPECT_TRUE(result.snapshots.empty());
}

TEST(Train, StrongRegularizationShrinksJacobian) {
  auto ds = synthetic_blobs(200, 16, 3, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 20;
  cfg.optimizer.lr = 0.01;
  cfg.seed = 5;
  auto plain = train(ArchSpec::mlp(16, 3, {8}), ds, cfg);
  cfg.lambda_jr = 100.0;
  auto reg = train(ArchSpec::mlp(16, 3, {8}), ds, cfg);
  const double f_plain = mean_jacobian_frob_sq(plain.model, ds.images);
  const double f_reg = mean_jacobian_frob_sq(reg.model, ds.images);
  EXPECT_LT(f_reg, f_plain);
  for (const auto& e : reg.record.epochs) EXPECT_GT(e.jr_term, 0.0);
}

TEST(Train, CyclicScheduleEmitsOneSnapshotPerCycle) {
  auto ds = synthetic_blobs(100, 9, 2, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 30;  // 4 steps per epoch, 12 total
  cfg.schedule = LrSchedule::kCyclicCosine;
  cfg.cycles = 3;
  auto result = train(ArchSpec::mlp(9, 2, {4}), ds, cfg);
  ASSERT_EQ(result.snapshots.size(), 3u);
  EXPECT_EQ(result.record.snapshot_steps, (std::vector<std::size_t>{4, 8, 12}));
  EXPECT_EQ(result.snapshots.back().params, result.model.params);

  cfg.epochs = 5;  // 20 steps, cycle length 7: snapshots at 7, 14 and the partial end
  result = train(ArchSpec::mlp(9, 2, {4}), ds, cfg);
  EXPECT_EQ(result.record.snapshot_steps, (std::vector<std::size_t>{7, 14, 20}));

  cfg.cycles = 50;
  EXPECT_THROW(train(ArchSpec::mlp(9, 2, {4}), ds, cfg), std::invalid_argument);
}

TEST(Train, DeterministicPerSeed) {
  auto ds = synthetic_blobs(60, 9, 3, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lambda_jr = 0.1;
  cfg.seed = 9;
  auto a = train(ArchSpec::mlp(9, 3, {5}), ds, cfg);
  auto b = train(ArchSpec::mlp(9, 3, {5}), ds, cfg);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.record.to_csv(), b.record.to_csv());
  cfg.seed = 10;
  auto c = train(ArchSpec::mlp(9, 3, {5}), ds, cfg);
  EXPECT_NE(a.model.params, c.model.params);
}

TEST(Train, DivergenceIsReported) {
  auto ds = synthetic_blobs(40, 4, 2, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.optimizer = {.kind = OptimizerKind::kSgd, .lr = 1e305, .momentum = 0.0};
  EXPECT_THROW(train(ArchSpec::mlp(4, 2, {3}), ds, cfg), DivergenceError);
}

TEST(TrainRecord, CsvLayout) {
  TrainRecord rec;
  rec.epochs.push_back({1, 0.5, 0.25, 0.25, 0.001});
  EXPECT_EQ(rec.to_csv(), "epoch,loss,ce_term,jr_term,lr\n1,0.5,0.25,0.25,0.001\n");
}
