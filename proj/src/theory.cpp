#include "jens/theory.hpp"

#include <cmath>
#include <sstream>
#include <thread>

#include "jens/format.hpp"
#include "jens/rng.hpp"

namespace jens {

void McConfig::validate() const {
  if (members < 1) throw std::invalid_argument("McConfig: members must be at least 1");
  if (rows < 1 || cols < 1) throw std::invalid_argument("McConfig: matrix dims must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("McConfig: sigma must be > 0");
  if (!std::isfinite(mu)) throw std::invalid_argument("McConfig: mu must be finite");
  if (samples < 1000) throw std::invalid_argument("McConfig: at least 1000 samples required");
  if (partitions < 1) throw std::invalid_argument("McConfig: partitions must be at least 1");
  if (!weights.empty()) {
    if (weights.size() != members) throw std::invalid_argument("McConfig: one weight per member");
    sum_sq_weights(weights);
    for (double c : weights) {
      if (members > 1 && !(c < 1.0)) throw std::invalid_argument("McConfig: weights must be < 1");
    }
  }
}

std::vector<double> McConfig::resolved_weights() const {
  if (!weights.empty()) return weights;
  return std::vector<double>(members, 1.0 / static_cast<double>(members));
}

bool McConfig::uniform() const {
  for (double c : weights) {
    if (c != weights.front()) return false;
  }
  return true;
}

double sum_sq_weights(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("sum_sq_weights: no weights");
  double total = 0.0, sq = 0.0;
  for (double c : weights) {
    if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("sum_sq_weights: weight outside (0, 1]");
    total += c;
    sq += c * c;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) {
    throw std::invalid_argument("sum_sq_weights: weights do not sum to 1");
  }
  const double m = static_cast<double>(weights.size());
  if (weights.size() >= 2 && !(sq >= 1.0 / m - kWeightTolerance && sq < 1.0)) {
    throw std::logic_error("sum_sq_weights: sum of squares outside [1/M, 1)");
  }
  return sq;
}

AnalyticBounds analytic_bounds(const McConfig& cfg) {
  cfg.validate();
  const auto w = cfg.resolved_weights();
  const double cd = static_cast<double>(cfg.rows * cfg.cols);
  const double m = static_cast<double>(cfg.members);
  const double s2 = cfg.sigma * cfg.sigma, mu2 = cfg.mu * cfg.mu;
  AnalyticBounds b;
  b.sum_sq = sum_sq_weights(w);
  b.e_single = cd * (s2 + mu2);
  b.var_single = cd * (4 * mu2 * s2 + 2 * s2 * s2);
  b.e_lower = cd * (s2 / m + mu2);
  b.var_lower = cd * (4 * mu2 * s2 / m + 2 * s2 * s2 / (m * m));
  const double ens_s2 = b.sum_sq * s2;
  b.e_exact = cd * (ens_s2 + mu2);
  b.var_exact = cd * (4 * mu2 * ens_s2 + 2 * ens_s2 * ens_s2);
  return b;
}

MomentEstimate estimate_moments(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("estimate_moments: need at least two values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean, d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  const double nn = static_cast<double>(n);
  MomentEstimate e;
  e.mean = mean;
  e.var = m2 / (nn - 1.0);
  m4 /= nn;
  const double pop_var = m2 / nn;
  e.se_mean = std::sqrt(e.var / nn);
  e.se_var = std::sqrt(std::max(0.0, m4 - pop_var * pop_var) / nn);
  return e;
}

BoundChecks judge_bounds(const AnalyticBounds& b, const MomentEstimate& ens,
                         const MomentEstimate& single, std::size_t members, bool uniform) {
  auto within = [](double est, double se, double target) {
    return std::abs(est - target) <= kStandardErrorBand * se;
  };
  BoundChecks c;
  c.mean_within = within(ens.mean, ens.se_mean, b.e_exact);
  c.var_within = within(ens.var, ens.se_var, b.var_exact);
  if (uniform) {
    c.lower_within = within(ens.mean, ens.se_mean, b.e_lower) && within(ens.var, ens.se_var, b.var_lower);
  }
  if (members >= 2) {
    c.ordering = ens.mean < single.mean;
    c.below_single = ens.mean < b.e_single && ens.var < b.var_single;
  }
  return c;
}

SimulationResult simulate_bounds(const McConfig& cfg, std::size_t jobs) {
  cfg.validate();
  const auto w = cfg.resolved_weights();
  const std::size_t n = cfg.samples, parts = std::min(cfg.partitions, n);
  const std::size_t entries = cfg.rows * cfg.cols;
  std::vector<double> ens(n), single(n);

  auto run_partition = [&](std::size_t p) {
    Rng rng(derive_seed(cfg.seed, p));
    const std::size_t begin = p * n / parts, end = (p + 1) * n / parts;
    for (std::size_t s = begin; s < end; ++s) {
      double fe = 0.0, fs = 0.0;
      for (std::size_t e = 0; e < entries; ++e) {
        double mixed = 0.0;
        for (std::size_t i = 0; i < cfg.members; ++i) {
          const double a = rng.normal(cfg.mu, cfg.sigma);
          mixed += w[i] * a;
          if (i == 0) fs += a * a;
        }
        fe += mixed * mixed;
      }
      ens[s] = fe;
      single[s] = fs;
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, parts));
  if (jobs == 1) {
    for (std::size_t p = 0; p < parts; ++p) run_partition(p);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) {
      threads.emplace_back([&, t] {
        for (std::size_t p = t; p < parts; p += jobs) run_partition(p);
      });
    }
    for (auto& t : threads) t.join();
  }

  SimulationResult r;
  r.analytic = analytic_bounds(cfg);
  r.ensemble = estimate_moments(ens);
  r.single = estimate_moments(single);
  r.checks = judge_bounds(r.analytic, r.ensemble, r.single, cfg.members, cfg.uniform());
  return r;
}

bool SweepResult::passed() const {
  if (!analytic_decreasing) return false;
  for (const auto& row : rows) {
    if (!row.within) return false;
  }
  return true;
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "members,e_exact,var_exact,emp_mean,se_mean,emp_var,se_var,within\n";
  for (const auto& r : rows) {
    out << r.members << ',' << full_precision(r.analytic.e_exact) << ','
        << full_precision(r.analytic.var_exact) << ',' << full_precision(r.empirical.mean) << ','
        << full_precision(r.empirical.se_mean) << ',' << full_precision(r.empirical.var) << ','
        << full_precision(r.empirical.se_var) << ',' << (r.within ? 1 : 0) << '\n';
  }
  return out.str();
}

SweepResult monotonicity_sweep(const McConfig& base, std::span<const std::size_t> ms,
                               std::size_t jobs) {
  if (ms.empty()) throw std::invalid_argument("monotonicity_sweep: no member counts");
  SweepResult out;
  out.analytic_decreasing = true;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    if (k > 0 && ms[k] <= ms[k - 1]) throw std::invalid_argument("monotonicity_sweep: Ms must ascend");
    auto cfg = base;
    cfg.members = ms[k];
    cfg.weights.clear();
    cfg.seed = derive_seed(base.seed, ms[k]);
    auto sim = simulate_bounds(cfg, jobs);
    SweepRow row;
    row.members = ms[k];
    row.analytic = sim.analytic;
    row.empirical = sim.ensemble;
    row.within = sim.checks.mean_within && sim.checks.var_within;
    if (k > 0) {
      const auto& prev = out.rows.back().analytic;
      if (!(row.analytic.e_exact < prev.e_exact && row.analytic.var_exact < prev.var_exact)) {
        out.analytic_decreasing = false;
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

SimplexSuiteResult simplex_property_suite(std::span<const std::size_t> ms, std::size_t per_m,
                                          std::uint64_t seed) {
  SimplexSuiteResult out;
  Rng rng(seed);
  constexpr std::uint64_t kMaxNumerator = 1u << 20;
  for (std::size_t m : ms) {
    if (m < 2 || m > 64) throw std::invalid_argument("simplex_property_suite: M must be in [2, 64]");
    for (std::size_t t = 0; t < per_m; ++t) {
      std::vector<std::uint64_t> k(m);
      std::uint64_t total = 0;
      for (auto& v : k) {
        v = 1 + rng.index(kMaxNumerator);
        total += v;
      }
      unsigned __int128 sq = 0;
      for (auto v : k) sq += static_cast<unsigned __int128>(v) * v;
      const unsigned __int128 total_sq = static_cast<unsigned __int128>(total) * total;
      const bool lower = static_cast<unsigned __int128>(m) * sq >= total_sq;
      const bool upper = sq < total_sq;
      ++out.checked;
      if (!(lower && upper)) ++out.violations;
    }
  }
  return out;
}

std::vector<FrobStats> empirical_model_frob(std::span<const Ensemble> targets, const Dataset& test,
                                            std::size_t n_inputs) {
  if (n_inputs < 1) throw std::invalid_argument("empirical_model_frob: n_inputs must be >= 1");
  const std::size_t n = std::min(n_inputs, test.size());
  std::vector<FrobStats> out;
  for (const auto& target : targets) {
    if (target.input_dim() != targets.front().input_dim() ||
        target.classes() != targets.front().classes()) {
      throw ShapeError("empirical_model_frob: targets must share an architecture");
    }
    FrobStats st;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> idx{i};
      const auto j = ensemble_jacobian(target, test.rows(idx));
      double f = 0.0;
      for (double v : j.data()) f += v * v;
      st.values.push_back(f);
    }
    for (double v : st.values) st.mean += v;
    st.mean /= static_cast<double>(n);
    if (n > 1) {
      for (double v : st.values) st.var += (v - st.mean) * (v - st.mean);
      st.var /= static_cast<double>(n - 1);
    }
    out.push_back(std::move(st));
  }
  return out;
}

double sign_test_p(std::size_t successes, std::size_t trials) {
  if (successes > trials) throw std::invalid_argument("sign_test_p: successes exceed trials");
  double p = 0.0;
  for (std::size_t k = successes; k <= trials; ++k) {
    p += std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) -
                  static_cast<double>(trials) * std::log(2.0));
  }
  return std::min(1.0, p);
}

std::string bounds_csv(const SimulationResult& r, const McConfig& cfg) {
  std::ostringstream out;
  out << "quantity,analytic,empirical,standard_error,within_4se\n";
  auto line = [&](const char* name, double analytic, double emp, double se) {
    out << name << ',' << full_precision(analytic) << ',' << full_precision(emp) << ','
        << full_precision(se) << ',' << (std::abs(emp - analytic) <= kStandardErrorBand * se ? 1 : 0)
        << '\n';
  };
  line("e_exact", r.analytic.e_exact, r.ensemble.mean, r.ensemble.se_mean);
  line("var_exact", r.analytic.var_exact, r.ensemble.var, r.ensemble.se_var);
  if (cfg.uniform()) {
    line("e_lower", r.analytic.e_lower, r.ensemble.mean, r.ensemble.se_mean);
    line("var_lower", r.analytic.var_lower, r.ensemble.var, r.ensemble.se_var);
  }
  line("e_single", r.analytic.e_single, r.single.mean, r.single.se_mean);
  line("var_single", r.analytic.var_single, r.single.var, r.single.se_var);
  return out.str();
}

}  // namespace jens
