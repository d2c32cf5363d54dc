#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jens/data_io.hpp"
#include "jens/ensemble.hpp"
#include "jens/uap.hpp"

namespace jens {

inline constexpr double kDefaultWeighting = 0.5;
inline const std::vector<double> kDefaultEpsilonGrid = {0.10, 0.15, 0.20, 0.25};

struct ModelDescriptor {
  std::string method;  // single | bagging | snapshot | softvote
  std::size_t learners = 1;
  double lambda_jr = 0.0;
};

// All accuracies in percent.
struct RobustnessReport {
  ModelDescriptor model;
  double clean_acc = 0.0;
  std::map<double, double> robust_acc;  // epsilon -> percent
  double mean_uap_acc = 0.0;
  double weighted_acc = 0.0;
  double w = kDefaultWeighting;

  void validate() const;
};

double clean_accuracy(const Ensemble& target, const Dataset& test);
double robust_accuracy(const Ensemble& target, const Dataset& test, const Tensor& delta,
                       bool clip = true);

// Unweighted mean of the map values.
double mean_accuracy(const std::map<double, double>& robust);

struct UapAccuracy {
  std::map<double, double> robust;
  double mean = 0.0;
  std::vector<Perturbation> perturbations;  // worst case per epsilon, grid order
};

// Worst-case UAP robust accuracy at each epsilon of the grid.
UapAccuracy mean_uap_accuracy(const Ensemble& target, const Dataset& test, const Dataset& train,
                              const UapConfig& base, std::span<const double> epsilons,
                              std::uint64_t base_seed = 0, std::size_t jobs = 1);

// w * clean + (1 - w) * mean_uap, w in [0, 1].
double weighted_accuracy(double clean, double mean_uap, double w = kDefaultWeighting);

RobustnessReport make_report(ModelDescriptor model, double clean,
                             std::map<double, double> robust, double w = kDefaultWeighting);

// Stable sort by weighted accuracy, highest first.
std::vector<RobustnessReport> sorted_by_weighted(std::vector<RobustnessReport> reports);

// CSV at full precision: method,learners,lambda_jr,clean,uap_010,uap_015,
// uap_020,uap_025,mean_uap,weighted,w. Rows sorted by weighted accuracy.
std::string report_csv(std::span<const RobustnessReport> reports);

struct TableRow {
  std::string label;
  const RobustnessReport* report;
};

// Aligned text table with one decimal place.
std::string format_table(std::span<const TableRow> rows);
std::string report_table(std::span<const RobustnessReport> reports);

struct Categories {
  std::optional<RobustnessReport> jr_only;        // best with M = 1, lambda > 0
  std::optional<RobustnessReport> ensemble_only;  // best with M > 1, lambda = 0
  std::optional<RobustnessReport> standard;       // best with M = 1, lambda = 0
};

Categories best_of_categories(std::span<const RobustnessReport> reports);

// Top-k rows followed by the three category rows.
std::string summary_table(std::span<const RobustnessReport> reports, std::size_t top_k = 3);

std::string method_display_name(const std::string& method);
std::string epsilon_column(double epsilon);  // 0.15 -> "uap_015"

}  // namespace jens
