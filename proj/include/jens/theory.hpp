#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jens/data_io.hpp"
#include "jens/ensemble.hpp"

namespace jens {

inline constexpr const char* kNormalSampler = "marsaglia_polar";
inline constexpr double kStandardErrorBand = 4.0;

struct McConfig {
  std::size_t members = 5;  // M
  std::size_t rows = 4;     // C
  std::size_t cols = 6;     // D
  double mu = 0.1;
  double sigma = 0.5;
  std::vector<double> weights;  // empty means uniform
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  std::size_t partitions = 8;  // fixed RNG streams; results do not depend on jobs

  void validate() const;
  std::vector<double> resolved_weights() const;
  bool uniform() const;
};

// Sum of squared weights; the weights must lie on the simplex.
double sum_sq_weights(std::span<const double> weights);

struct AnalyticBounds {
  double sum_sq = 1.0;
  double e_single = 0, var_single = 0;
  double e_lower = 0, var_lower = 0;
  double e_exact = 0, var_exact = 0;
};

AnalyticBounds analytic_bounds(const McConfig& cfg);

struct MomentEstimate {
  double mean = 0, var = 0;
  double se_mean = 0, se_var = 0;
};

// Two-pass sample moments; the variance standard error uses the fourth
// central moment.
MomentEstimate estimate_moments(std::span<const double> values);

struct BoundChecks {
  bool mean_within = false;   // |mean - E_exact| <= 4 SE
  bool var_within = false;    // |var - Var_exact| <= 4 SE
  bool lower_within = true;   // uniform weights: mean and var within 4 SE of the lower bounds
  bool ordering = true;       // M >= 2: empirical ensemble mean < empirical single mean
  bool below_single = true;   // M >= 2: empirical ensemble mean and var < single analytic values
  bool passed() const {
    return mean_within && var_within && lower_within && ordering && below_single;
  }
};

BoundChecks judge_bounds(const AnalyticBounds& bounds, const MomentEstimate& ensemble,
                         const MomentEstimate& single, std::size_t members, bool uniform);

struct SimulationResult {
  AnalyticBounds analytic;
  MomentEstimate ensemble;  // ||J_F||_F^2
  MomentEstimate single;    // ||J_1||_F^2
  BoundChecks checks;
  bool passed() const { return checks.passed(); }
};

SimulationResult simulate_bounds(const McConfig& cfg, std::size_t jobs = 1);

struct SweepRow {
  std::size_t members = 0;
  AnalyticBounds analytic;
  MomentEstimate empirical;
  bool within = false;  // mean and variance within 4 SE of the exact values
};

struct SweepResult {
  std::vector<SweepRow> rows;
  bool analytic_decreasing = false;
  bool passed() const;
  std::string to_csv() const;
};

// Uniform weights at each M; Ms must be strictly ascending.
SweepResult monotonicity_sweep(const McConfig& base, std::span<const std::size_t> ms,
                               std::size_t jobs = 1);

struct SimplexSuiteResult {
  std::size_t checked = 0;
  std::size_t violations = 0;
  bool passed() const { return checked > 0 && violations == 0; }
};

// Random weights c_i = k_i / K with positive integers k_i, checked with
// integer arithmetic: 1/M <= sum c_i^2 < 1 iff M * sum k_i^2 >= K^2 > sum k_i^2.
SimplexSuiteResult simplex_property_suite(std::span<const std::size_t> ms, std::size_t per_m,
                                          std::uint64_t seed);

struct FrobStats {
  double mean = 0, var = 0;
  std::vector<double> values;
};

// ||J_F(x)||_F^2 over the first n_inputs test rows, per target (logit_mean only).
std::vector<FrobStats> empirical_model_frob(std::span<const Ensemble> targets, const Dataset& test,
                                            std::size_t n_inputs);

// One-sided binomial tail P(X >= successes) for X ~ Bin(trials, 1/2).
double sign_test_p(std::size_t successes, std::size_t trials);

std::string bounds_csv(const SimulationResult& result, const McConfig& cfg);

}  // namespace jens
