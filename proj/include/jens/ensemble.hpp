#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jens/autodiff.hpp"
#include "jens/data_io.hpp"
#include "jens/models.hpp"
#include "jens/training.hpp"

namespace jens {

class UnsupportedModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Aggregation { kLogitMean, kProbMean };
enum class EnsembleMethod { kSingle, kBagging, kSnapshot, kSoftvote };

const char* aggregation_name(Aggregation a);
const char* method_name(EnsembleMethod m);
Aggregation parse_aggregation(const std::string& name);
EnsembleMethod parse_method(const std::string& name);
// Aggregation each builder uses: prob_mean for softvote, logit_mean otherwise.
Aggregation default_aggregation(EnsembleMethod m);

inline constexpr double kWeightTolerance = 1e-12;

struct Ensemble {
  EnsembleMethod method = EnsembleMethod::kSingle;
  Aggregation aggregation = Aggregation::kLogitMean;
  std::vector<ModelParams> members;
  std::vector<double> weights;

  static Ensemble single(ModelParams model);
  static Ensemble uniform(std::vector<ModelParams> members, EnsembleMethod method,
                          Aggregation aggregation);

  std::size_t size() const { return members.size(); }
  std::size_t input_dim() const { return members.front().input_dim(); }
  std::size_t classes() const { return members.front().classes(); }
  // Weights on the simplex with 0 < c_i <= 1 (c_i = 1 only when M = 1);
  // members share D and C.
  void validate() const;
};

double sum_sq(std::span<const double> weights);

struct BoundEnsemble {
  Aggregation aggregation = Aggregation::kLogitMean;
  std::vector<BoundModel> members;
  std::vector<double> weights;
};

// Members are bound as constants: only the input is differentiable.
BoundEnsemble bind_ensemble(ad::Graph& graph, const Ensemble& ensemble);

// logit_mean: sum_i c_i f_i(x); prob_mean: sum_i c_i softmax(f_i(x)).
ad::Var ensemble_forward(const BoundEnsemble& ensemble, ad::Var x);
Tensor ensemble_forward(const Ensemble& ensemble, const Tensor& batch);

// Log class probabilities of the aggregated output, [B, C].
ad::Var ensemble_log_probs(const BoundEnsemble& ensemble, ad::Var x);

std::vector<std::size_t> predict(const Ensemble& ensemble, const Tensor& batch);

// Jacobian of the aggregated logits at x ([D] or [1, D]); logit_mean only.
Tensor ensemble_jacobian(const Ensemble& ensemble, const Tensor& x);

// --- builders -------------------------------------------------------------

// Member i uses seed master_seed + i. jobs > 1 trains independent members
// on worker threads. When records is non-null it receives one training
// record per run (one for snapshot, M for bagging and softvote).
using RecordSink = std::vector<TrainRecord>*;

Ensemble build_single(const Dataset& ds, const ArchSpec& spec, const TrainConfig& cfg,
                      std::uint64_t seed, RecordSink records = nullptr);
Ensemble build_bagging(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                       std::size_t members, std::uint64_t seed, std::size_t jobs = 1,
                       RecordSink records = nullptr);
// One cyclic-cosine run with `members` cycles; the cycle-end snapshots are the members.
Ensemble build_snapshot(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                        std::size_t members, std::uint64_t seed, RecordSink records = nullptr);
Ensemble build_softvote(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                        std::size_t members, std::uint64_t seed, std::size_t jobs = 1,
                        RecordSink records = nullptr);
Ensemble build_ensemble(EnsembleMethod method, const Dataset& ds, const ArchSpec& spec,
                        const TrainConfig& base_cfg, std::size_t members, std::uint64_t seed,
                        std::size_t jobs = 1, RecordSink records = nullptr);

// --- persistence ----------------------------------------------------------

// Writes manifest.json plus one model file per member into dir. Provenance
// entries are stored verbatim in the manifest.
void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir,
                   const std::map<std::string, std::string>& provenance = {});
Ensemble load_ensemble(const std::filesystem::path& dir);

}  // namespace jens
