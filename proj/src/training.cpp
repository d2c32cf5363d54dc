#include "jens/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "jens/format.hpp"

namespace jens {

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}
const char* schedule_name(LrSchedule schedule) {
  return schedule == LrSchedule::kConstant ? "constant" : "cyclic_cosine";
}
const char* jacobian_mode_name(JacobianMode mode) {
  return mode == JacobianMode::kExact ? "exact" : "projection";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}
LrSchedule parse_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cyclic_cosine") return LrSchedule::kCyclicCosine;
  throw std::invalid_argument("unknown lr schedule '" + name + "'");
}
JacobianMode parse_jacobian_mode(const std::string& name) {
  if (name == "exact") return JacobianMode::kExact;
  if (name == "projection") return JacobianMode::kProjection;
  throw std::invalid_argument("unknown jacobian mode '" + name + "'");
}

TrainConfig TrainConfig::defaults_for(Arch arch) {
  TrainConfig cfg;
  if (arch == Arch::kLeNet) {
    cfg.optimizer.kind = OptimizerKind::kSgd;
    cfg.optimizer.lr = 0.05;
    cfg.optimizer.momentum = 0.9;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lambda_jr >= 0.0) || !std::isfinite(lambda_jr)) {
    throw std::invalid_argument("lambda_jr must be a finite value >= 0");
  }
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (schedule == LrSchedule::kCyclicCosine && cycles < 1) {
    throw std::invalid_argument("cyclic schedule needs at least one cycle");
  }
  if (jacobian_mode == JacobianMode::kProjection && n_proj < 1) {
    throw std::invalid_argument("projection mode needs n_proj >= 1");
  }
  if (!(optimizer.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 ||
      optimizer.beta2 >= 1.0) {
    throw std::invalid_argument("adam betas must be in [0, 1)");
  }
}

ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = labels.size(), cols = logits.shape()[1];
  std::vector<double> onehot(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= cols) throw std::out_of_range("cross_entropy: label out of range");
    onehot[i * cols + labels[i]] = 1.0;
  }
  auto& g = logits.graph();
  auto picked = ad::sum(ad::mul(ad::log_softmax(logits), g.constant(Tensor({rows, cols}, onehot))));
  return ad::scale(picked, -1.0 / static_cast<double>(rows));
}

JointLoss joint_loss(const BoundModel& model, ad::Var x, std::span<const std::size_t> labels,
                     double lambda_jr, JacobianMode mode, std::size_t n_proj, Rng* proj_rng) {
  if (labels.empty()) throw std::invalid_argument("joint_loss: empty batch");
  if (lambda_jr < 0.0) throw std::invalid_argument("joint_loss: lambda_jr must be >= 0");
  auto logits = forward_logits(model, x);
  JointLoss out;
  out.ce = cross_entropy(logits, labels);
  auto& g = x.graph();
  if (lambda_jr == 0.0) {
    out.jr = g.constant(Tensor::scalar(0.0));
    out.total = out.ce;
    return out;
  }
  ad::Var frob_sum;
  if (mode == JacobianMode::kExact) {
    frob_sum = jacobian_frob_sq_sum(logits, x);
  } else {
    if (proj_rng == nullptr) throw std::invalid_argument("joint_loss: projection mode needs an rng");
    frob_sum = jacobian_frob_sq_projected(logits, x, n_proj, *proj_rng);
  }
  out.jr = ad::scale(frob_sum, lambda_jr / (2.0 * static_cast<double>(labels.size())));
  out.total = ad::add(out.ce, out.jr);
  return out;
}

void optimizer_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
                    OptimizerState& state, const OptimizerConfig& hyper, double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("optimizer_step: gradient " + std::to_string(i) + " has shape " +
                       shape_str(grads[i].shape()) + ", parameter " +
                       shape_str(params[i].shape()));
    }
  }
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.size(), 0.0);
      if (hyper.kind == OptimizerKind::kAdam) state.second.emplace_back(p.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].to_vector();
    auto g = grads[i].data();
    auto& m = state.first[i];
    if (hyper.kind == OptimizerKind::kSgd) {
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = hyper.momentum * m[k] + g[k];
        p[k] -= lr * m[k];
      }
    } else {
      auto& v = state.second[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
        v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
        p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + hyper.eps);
      }
    }
    params[i] = Tensor(params[i].shape(), std::move(p));
  }
}

std::size_t cycle_length(std::size_t total_steps, std::size_t cycles) {
  if (cycles == 0) throw std::invalid_argument("cycle count must be at least 1");
  return (total_steps + cycles - 1) / cycles;
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.schedule == LrSchedule::kConstant) return cfg.optimizer.lr;
  const std::size_t len = std::max<std::size_t>(1, cycle_length(total_steps, cfg.cycles));
  const double phase = static_cast<double>(step % len) / static_cast<double>(len);
  return cfg.optimizer.lr / 2.0 * (std::cos(std::numbers::pi * phase) + 1.0);
}

std::string TrainRecord::to_csv() const {
  std::ostringstream out;
  out << "epoch,loss,ce_term,jr_term,lr\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << full_precision(e.loss) << ',' << full_precision(e.ce_term) << ','
        << full_precision(e.jr_term) << ',' << full_precision(e.lr) << '\n';
  }
  return out.str();
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

TrainResult train(const ModelParams& init, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (ds.dim() != init.input_dim()) {
    throw ShapeError("train: dataset has D=" + std::to_string(ds.dim()) + ", model expects " +
                     std::to_string(init.input_dim()));
  }
  if (ds.classes > init.classes()) throw ShapeError("train: dataset has more classes than model");

  TrainResult result;
  result.model = init;
  OptimizerState state;
  Rng proj_rng(derive_seed(cfg.seed, 2));
  const BatchPlan plan{cfg.batch_size, derive_seed(cfg.seed, 1), false};
  const std::size_t per_epoch = steps_per_epoch(ds.size(), cfg.batch_size);
  const std::size_t total = per_epoch * cfg.epochs;
  if (cfg.schedule == LrSchedule::kCyclicCosine && cfg.cycles > total) {
    throw std::invalid_argument("train: " + std::to_string(cfg.cycles) + " cycles need at least as many steps, got " +
                                std::to_string(total));
  }
  const std::size_t len = cycle_length(total, cfg.schedule == LrSchedule::kCyclicCosine ? cfg.cycles : 1);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    double seen = 0.0;
    for (const auto& batch : epoch_batches(ds.size(), plan, epoch)) {
      const double lr = scheduled_lr(cfg, step, total);
      std::vector<std::size_t> labels;
      labels.reserve(batch.size());
      for (auto i : batch) labels.push_back(ds.labels[i]);
      std::vector<Tensor> grads;
      double loss = 0.0, ce = 0.0, jr = 0.0;
      try {
        ad::Graph g;
        auto bound = bind_params(g, result.model, true);
        auto x = g.leaf(ds.rows(batch));
        auto terms = joint_loss(bound, x, labels, cfg.lambda_jr, cfg.jacobian_mode, cfg.n_proj,
                                &proj_rng);
        loss = terms.total.value().item();
        ce = terms.ce.value().item();
        jr = terms.jr.value().item();
        grads = ad::grad_values(terms.total, bound.params);
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                              ", step " + std::to_string(step) + " (lr " + full_precision(lr) +
                              "): " + e.what());
      }
      optimizer_step(result.model.params, grads, state, cfg.optimizer, lr);
      for (const auto& p : result.model.params) {
        if (!p.all_finite()) {
          throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                                ", step " + std::to_string(step) +
                                ": parameters became non-finite (loss " + full_precision(loss) +
                                ")");
        }
      }
      const double w = static_cast<double>(batch.size());
      rec.loss += w * loss;
      rec.ce_term += w * ce;
      rec.jr_term += w * jr;
      seen += w;
      rec.lr = lr;
      ++step;
      if (cfg.schedule == LrSchedule::kCyclicCosine && (step % len == 0 || step == total)) {
        result.snapshots.push_back(result.model);
        result.record.snapshot_steps.push_back(step);
      }
    }
    rec.loss /= seen;
    rec.ce_term /= seen;
    rec.jr_term /= seen;
    result.record.epochs.push_back(rec);
  }
  return result;
}

TrainResult train(const ArchSpec& spec, const Dataset& ds, const TrainConfig& cfg) {
  return train(init_params(spec, cfg.seed), ds, cfg);
}

double accuracy(const ModelParams& model, const Dataset& ds) {
  const auto pred = predict(model, ds.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace jens
