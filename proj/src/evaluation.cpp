#include "jens/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jens/format.hpp"

namespace jens {

void RobustnessReport::validate() const {
  auto pct = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 100.0)) throw std::invalid_argument(std::string(what) + " outside [0, 100]");
  };
  pct(clean_acc, "clean accuracy");
  pct(mean_uap_acc, "mean UAP accuracy");
  pct(weighted_acc, "weighted accuracy");
  for (const auto& [eps, acc] : robust_acc) pct(acc, "robust accuracy");
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("weighting w outside [0, 1]");
}

double clean_accuracy(const Ensemble& target, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("clean_accuracy: empty test set");
  const auto pred = predict(target, test.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

double robust_accuracy(const Ensemble& target, const Dataset& test, const Tensor& delta, bool clip) {
  return 100.0 * (1.0 - attack_success_rate(target, test, delta, clip));
}

double mean_accuracy(const std::map<double, double>& robust) {
  if (robust.empty()) throw std::invalid_argument("mean over an empty epsilon grid");
  double s = 0.0;
  for (const auto& [eps, acc] : robust) s += acc;
  return s / static_cast<double>(robust.size());
}

UapAccuracy mean_uap_accuracy(const Ensemble& target, const Dataset& test, const Dataset& train,
                              const UapConfig& base, std::span<const double> epsilons,
                              std::uint64_t base_seed, std::size_t jobs) {
  if (epsilons.empty()) throw std::invalid_argument("mean_uap_accuracy: empty epsilon grid");
  UapAccuracy out;
  for (double eps : epsilons) {
    auto cfg = base;
    cfg.epsilon = eps;
    auto sweep = worst_case_uap(target, train, test, cfg, base_seed, jobs);
    out.robust[eps] = 100.0 * (1.0 - sweep.best.success_rate);
    out.perturbations.push_back(std::move(sweep.best));
  }
  out.mean = mean_accuracy(out.robust);
  return out;
}

double weighted_accuracy(double clean, double mean_uap, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("weighting w must lie in [0, 1]");
  return w * clean + (1.0 - w) * mean_uap;
}

RobustnessReport make_report(ModelDescriptor model, double clean, std::map<double, double> robust,
                             double w) {
  RobustnessReport r;
  r.model = std::move(model);
  r.clean_acc = clean;
  r.robust_acc = std::move(robust);
  r.mean_uap_acc = mean_accuracy(r.robust_acc);
  r.w = w;
  r.weighted_acc = weighted_accuracy(clean, r.mean_uap_acc, w);
  r.validate();
  return r;
}

std::vector<RobustnessReport> sorted_by_weighted(std::vector<RobustnessReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return a.weighted_acc > b.weighted_acc;
  });
  return reports;
}

std::string epsilon_column(double epsilon) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "uap_%03ld", std::lround(epsilon * 100.0));
  return buf;
}

std::string report_csv(std::span<const RobustnessReport> reports) {
  std::ostringstream out;
  out << "method,learners,lambda_jr,clean";
  for (double eps : kDefaultEpsilonGrid) out << ',' << epsilon_column(eps);
  out << ",mean_uap,weighted,w\n";
  for (const auto& r : sorted_by_weighted({reports.begin(), reports.end()})) {
    out << r.model.method << ',' << r.model.learners << ',' << full_precision(r.model.lambda_jr)
        << ',' << full_precision(r.clean_acc);
    for (double eps : kDefaultEpsilonGrid) {
      out << ',';
      for (const auto& [e, acc] : r.robust_acc) {
        if (epsilon_column(e) == epsilon_column(eps)) out << full_precision(acc);
      }
    }
    out << ',' << full_precision(r.mean_uap_acc) << ',' << full_precision(r.weighted_acc) << ','
        << full_precision(r.w) << '\n';
  }
  return out.str();
}

std::string method_display_name(const std::string& method) {
  if (method == "single") return "Single";
  if (method == "bagging") return "Bagging";
  if (method == "snapshot") return "Snapshot";
  if (method == "softvote") return "Soft Voting";
  return method;
}

std::string format_table(std::span<const TableRow> rows) {
  const std::vector<std::string> header{"Ensemble", "Learners", "lambda_JR", "Clean", "Avg. UAP",
                                        "Weighted"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& row : rows) {
    const auto& r = *row.report;
    cells.push_back({row.label, std::to_string(r.model.learners),
                     r.model.lambda_jr == 0.0 ? "0" : round_half_up(r.model.lambda_jr, 2),
                     round_half_up(r.clean_acc, 1), round_half_up(r.mean_uap_acc, 1),
                     round_half_up(r.weighted_acc, 1)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      if (c) out << "  ";
      const auto pad = std::string(width[c] - cells[i][c].size(), ' ');
      out << (c == 0 ? cells[i][c] + pad : pad + cells[i][c]);
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 2 * (width.size() - 1);
      for (auto w : width) total += w;
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

std::string report_table(std::span<const RobustnessReport> reports) {
  const auto sorted = sorted_by_weighted({reports.begin(), reports.end()});
  std::vector<TableRow> rows;
  for (const auto& r : sorted) rows.push_back({method_display_name(r.model.method), &r});
  return format_table(rows);
}

Categories best_of_categories(std::span<const RobustnessReport> reports) {
  Categories out;
  auto consider = [](std::optional<RobustnessReport>& slot, const RobustnessReport& r) {
    if (!slot || r.weighted_acc > slot->weighted_acc) slot = r;
  };
  for (const auto& r : reports) {
    const bool single = r.model.learners == 1;
    const bool jr = r.model.lambda_jr > 0.0;
    if (single && jr) consider(out.jr_only, r);
    if (!single && !jr) consider(out.ensemble_only, r);
    if (single && !jr) consider(out.standard, r);
  }
  return out;
}

std::string summary_table(std::span<const RobustnessReport> reports, std::size_t top_k) {
  const auto sorted = sorted_by_weighted({reports.begin(), reports.end()});
  const auto cats = best_of_categories(reports);
  std::vector<TableRow> rows;
  for (std::size_t i = 0; i < std::min(top_k, sorted.size()); ++i) {
    rows.push_back({method_display_name(sorted[i].model.method), &sorted[i]});
  }
  if (cats.jr_only) rows.push_back({"JR Only", &*cats.jr_only});
  if (cats.ensemble_only) {
    rows.push_back({method_display_name(cats.ensemble_only->model.method), &*cats.ensemble_only});
  }
  if (cats.standard) rows.push_back({"Standard", &*cats.standard});
  return format_table(rows);
}

}  // namespace jens
