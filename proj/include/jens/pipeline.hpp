#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "jens/config.hpp"
#include "jens/data_io.hpp"
#include "jens/evaluation.hpp"
#include "jens/theory.hpp"

namespace jens {

// A trained model or perturbation the command needs is absent or stale.
class MissingArtifactError : public DataError {
 public:
  using DataError::DataError;
};

struct DataSplits {
  Dataset train;
  Dataset test;
};

// Synthetic blobs, or IDX files under <data_dir>/<dataset>/ (optionally gzipped).
DataSplits load_data(const ExperimentConfig& cfg);

// "# config_hash=<hex>,master_seed=<n>"
std::string provenance_line(const ExperimentConfig& cfg);

// Content hash of everything that determines a trained grid point.
std::string point_hash(const ExperimentConfig& cfg, const GridPoint& point);
// Training seed of a grid point; shared across lambda so lambda pairs start alike.
std::uint64_t point_seed(const ExperimentConfig& cfg, const GridPoint& point);

struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path model_dir(const std::string& id) const { return root / "models" / id; }
  std::filesystem::path records_dir() const { return root / "records"; }
  std::filesystem::path perturbation(const std::string& id, double epsilon) const;
  std::filesystem::path results_dir() const { return root / "results"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

struct TrainSummary {
  std::size_t trained = 0;
  std::size_t skipped = 0;
  std::vector<std::string> diverged;  // ids
};

// Trains every grid point not already completed under the same point hash.
// Divergence is recorded per point and does not stop the sweep.
TrainSummary run_train(const ExperimentConfig& cfg, std::ostream& log);

struct AttackSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failed;  // "<id>@<epsilon>"
};

// Worst-case UAP per (trained point, epsilon); resumable by perturbation hash.
AttackSummary run_attack(const ExperimentConfig& cfg, std::ostream& log);

// Reports recomputed from the persisted models and perturbations.
std::vector<RobustnessReport> collect_reports(const ExperimentConfig& cfg, const DataSplits& data);

// Writes results/report.csv and results/table.txt.
std::vector<RobustnessReport> run_eval(const ExperimentConfig& cfg, std::ostream& log);

// Regenerates report/report.csv, report/table.txt, report/figure_data.csv and
// one PNG per perturbation under report/png.
void run_report(const ExperimentConfig& cfg, std::ostream& log);

struct TheoryOptions {
  McConfig mc;  // defaults match the acceptance configuration
  std::vector<std::size_t> sweep_members = {1, 3, 6, 9};
  double sweep_mu = 0.0;
  double sweep_sigma = 1.0;
  std::size_t sweep_samples = 100000;
  std::vector<std::size_t> property_members = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  std::size_t property_count = 10000;
  bool tamper_lower = false;  // negative control: inflate E_lower by 10%
  std::filesystem::path out = "runs/theory";
  std::size_t jobs = 1;

  std::string canonical() const;
};

struct TheoryOutcome {
  SimulationResult simulation;
  BoundChecks checks;  // as judged, after any tampering
  SweepResult sweep;
  SimplexSuiteResult simplex;
  bool passed() const { return checks.passed() && sweep.passed() && simplex.passed(); }
};

// Writes theory/bounds.csv, theory/monotonicity.csv and theory/simplex.csv.
TheoryOutcome run_verify_theory(const TheoryOptions& opts, std::ostream& log);

}  // namespace jens
