#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "jens/autodiff.hpp"
#include "jens/gradcheck.hpp"
#include "jens/rng.hpp"
#include "jens/tensor.hpp"

namespace jens {

enum class Arch : std::uint8_t { kMlp = 0, kLeNet = 1 };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& name);

class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Classifier architecture. The LeNet variant is conv(6,5x5) -> avgpool 2x2 ->
// conv(16,5x5) -> avgpool 2x2 -> dense 120 -> dense 84 -> dense C on a
// single-channel square image, ReLU after every hidden layer.
struct ArchSpec {
  Arch arch = Arch::kMlp;
  std::size_t input_dim = 784;
  std::size_t classes = 10;
  std::vector<std::size_t> hidden = {256, 128};  // MLP only
  std::size_t image_side = 28;                   // LeNet only

  static ArchSpec mlp(std::size_t input_dim, std::size_t classes,
                      std::vector<std::size_t> hidden = {256, 128});
  static ArchSpec lenet(std::size_t classes = 10, std::size_t image_side = 28);

  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

// Parameter shapes in storage order: weight then bias for each layer.
std::vector<Shape> param_shapes(const ArchSpec& spec);

struct ModelParams {
  ArchSpec spec;
  std::vector<Tensor> params;

  std::size_t input_dim() const { return spec.input_dim; }
  std::size_t classes() const { return spec.classes; }
  std::size_t parameter_count() const;
  void validate() const;
};

// Glorot-uniform weights, zero biases; deterministic per seed.
ModelParams init_params(const ArchSpec& spec, std::uint64_t seed);

// Parameters placed on a graph, as trainable leaves or as constants.
struct BoundModel {
  ArchSpec spec;
  std::vector<ad::Var> params;
};

BoundModel bind_params(ad::Graph& graph, const ModelParams& model, bool trainable);

// batch: [B, D] -> logits [B, C].
ad::Var forward_logits(const BoundModel& model, ad::Var batch);
Tensor forward_logits(const ModelParams& model, const Tensor& batch);

// Row-wise argmax, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);
std::vector<std::size_t> predict(const ModelParams& model, const Tensor& batch);

// --- Jacobians of the logits with respect to the input --------------------

// x: [1, D]; returns J as a graph-attached [C, D] tensor that stays
// differentiable in the model parameters.
ad::Var jacobian_exact(const BoundModel& model, ad::Var x);
Tensor jacobian_exact(const ModelParams& model, const Tensor& x);

// Sum over the batch of ||J(x_i)||_F^2 from C backward passes.
// logits must be computed row-independently from x.
ad::Var jacobian_frob_sq_sum(ad::Var logits, ad::Var x);

// Mean over the rows of x of ||J(x_i)||_F^2, evaluated in chunks.
double mean_jacobian_frob_sq(const ModelParams& model, const Tensor& x);

// Unbiased estimate of sum_i ||J(x_i)||_F^2: C * mean_k sum_i ||v_ik^T J(x_i)||^2
// with each v_ik uniform on the unit sphere of R^C; one backward pass per
// projection.
ad::Var jacobian_frob_sq_projected(ad::Var logits, ad::Var x, std::size_t n_proj, Rng& rng);
// Same estimator with caller-supplied projections, each [B, C] with unit rows.
ad::Var jacobian_frob_sq_projected(ad::Var logits, ad::Var x,
                                   std::span<const Tensor> projections);

// Single-input estimate (x: [1, D]).
ad::Var frob_sq_estimate(const BoundModel& model, ad::Var x, std::size_t n_proj,
                         std::uint64_t seed);

// Draws a [rows, dim] tensor of independent unit vectors.
Tensor random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng);

// --- gradient checking ----------------------------------------------------

using ModelLossFn = std::function<ad::Var(const BoundModel& model)>;

ad::GradCheckReport check_gradients(const ModelParams& model, const ModelLossFn& loss,
                                    const ad::GradCheckOptions& options = {});

// --- persistence ----------------------------------------------------------

inline constexpr std::uint16_t kModelFormatVersion = 1;

std::string serialize_model(const ModelParams& model);
ModelParams deserialize_model(std::string_view bytes);
void save_model(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace jens
