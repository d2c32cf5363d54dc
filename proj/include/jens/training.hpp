#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jens/autodiff.hpp"
#include "jens/data_io.hpp"
#include "jens/models.hpp"
#include "jens/rng.hpp"

namespace jens {

// Loss or parameters became non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { kSgd, kAdam };
enum class LrSchedule { kConstant, kCyclicCosine };
enum class JacobianMode { kExact, kProjection };

const char* optimizer_name(OptimizerKind kind);
const char* schedule_name(LrSchedule schedule);
const char* jacobian_mode_name(JacobianMode mode);
OptimizerKind parse_optimizer(const std::string& name);
LrSchedule parse_schedule(const std::string& name);
JacobianMode parse_jacobian_mode(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lambda_jr = 0.0;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  LrSchedule schedule = LrSchedule::kConstant;
  std::size_t cycles = 1;
  std::uint64_t seed = 0;
  JacobianMode jacobian_mode = JacobianMode::kExact;
  std::size_t n_proj = 1;

  // Adam 1e-3 for the MLP, SGD momentum 0.9 at 0.05 for LeNet.
  static TrainConfig defaults_for(Arch arch);
  void validate() const;
};

// --- loss -----------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label].
ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> labels);

struct JointLoss {
  ad::Var total;
  ad::Var ce;
  ad::Var jr;  // (lambda/2) * mean ||J||_F^2; a zero constant when lambda = 0
};

// x must be a node the Jacobian can be taken against (typically a leaf).
// proj_rng is only used in projection mode.
JointLoss joint_loss(const BoundModel& model, ad::Var x, std::span<const std::size_t> labels,
                     double lambda_jr, JacobianMode mode = JacobianMode::kExact,
                     std::size_t n_proj = 1, Rng* proj_rng = nullptr);

// --- optimizers -----------------------------------------------------------

struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first;   // momentum buffer or Adam m
  std::vector<std::vector<double>> second;  // Adam v
};

// In-place update of params with grads at the given learning rate.
void optimizer_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
                    OptimizerState& state, const OptimizerConfig& hyper, double lr);

// Learning rate at step t (0-based) of a run with total_steps steps.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);
std::size_t cycle_length(std::size_t total_steps, std::size_t cycles);

// --- training -------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // batch means averaged over the epoch
  double ce_term = 0.0;
  double jr_term = 0.0;
  double lr = 0.0;  // rate used at the last step of the epoch
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::vector<std::size_t> snapshot_steps;  // steps after which a snapshot was taken

  std::string to_csv() const;
};

struct TrainResult {
  ModelParams model;
  TrainRecord record;
  std::vector<ModelParams> snapshots;  // cyclic schedule only
};

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size);

TrainResult train(const ModelParams& init, const Dataset& ds, const TrainConfig& cfg);
// Initializes from cfg.seed.
TrainResult train(const ArchSpec& spec, const Dataset& ds, const TrainConfig& cfg);

double accuracy(const ModelParams& model, const Dataset& ds);

}  // namespace jens
