#include "jens/pipeline.hpp"

#include <cmath>
#include <mutex>
#include <sstream>

#include "jens/binio.hpp"
#include "jens/format.hpp"
#include "jens/parallel.hpp"
#include "json.hpp"

namespace jens {

namespace fs = std::filesystem;

namespace {

fs::path find_idx(const fs::path& dir, const std::string& stem) {
  for (const auto& name : {stem, stem + ".gz"}) {
    if (fs::exists(dir / name)) return dir / name;
  }
  throw DataError("missing dataset file " + (dir / stem).string() + "[.gz]");
}

std::string eps_tag(double epsilon) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03ld", std::lround(epsilon * 100.0));
  return buf;
}

std::string attack_hash(const ExperimentConfig& cfg, const GridPoint& point, double epsilon) {
  return hex64(fnv1a64(point_hash(cfg, point) + "\n" +
                       cfg.canonical_subset({"attack.seeds", "attack.iterations",
                                             "attack.batch_size", "attack.step_size",
                                             "attack.clip", "run.seed"}) +
                       "epsilon=" + full_precision(epsilon) + "\n"));
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

// Run manifest: per-point training status keyed by id.
class RunManifest {
 public:
  explicit RunManifest(const RunLayout& layout) : path_(layout.manifest()) {
    if (fs::exists(path_)) {
      try {
        doc_ = nlohmann::ordered_json::parse(binio::read_file(path_));
      } catch (const nlohmann::json::exception& e) {
        throw binio::FormatError("run manifest: " + std::string(e.what()));
      }
      if (doc_.value("format", "") != "jens-run") throw binio::FormatError("not a run manifest");
    }
    if (!doc_.contains("points")) doc_["points"] = nlohmann::ordered_json::object();
  }

  void set_config(const ExperimentConfig& cfg) {
    std::lock_guard lock(mu_);
    doc_["format"] = "jens-run";
    doc_["version"] = 1;
    doc_["config_hash"] = hex64(cfg.hash());
    doc_["master_seed"] = cfg.seed;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::istringstream in(cfg.canonical());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    doc_["config"] = config;
    // keep the key order stable regardless of history
    auto points = doc_["points"];
    doc_.erase("points");
    doc_["points"] = points;
  }

  // Status of a point if recorded under the given hash.
  std::string status(const std::string& id, const std::string& hash) const {
    std::lock_guard lock(mu_);
    const auto& points = doc_["points"];
    if (!points.contains(id)) return "";
    const auto& entry = points[id];
    if (entry.value("hash", "") != hash) return "";
    return entry.value("status", "");
  }

  void record(const std::string& id, const std::string& hash, const std::string& status,
              const std::string& message) {
    std::lock_guard lock(mu_);
    nlohmann::ordered_json entry;
    entry["hash"] = hash;
    entry["status"] = status;
    if (!message.empty()) entry["message"] = message;
    doc_["points"][id] = entry;
    sort_points();
    binio::write_file_atomic(path_, doc_.dump(2) + "\n");
  }

  void save() {
    std::lock_guard lock(mu_);
    sort_points();
    binio::write_file_atomic(path_, doc_.dump(2) + "\n");
  }

 private:
  void sort_points() {
    std::map<std::string, nlohmann::ordered_json> sorted;
    for (auto& [k, v] : doc_["points"].items()) sorted[k] = v;
    nlohmann::ordered_json points = nlohmann::ordered_json::object();
    for (auto& [k, v] : sorted) points[k] = v;
    doc_["points"] = points;
  }

  fs::path path_;
  nlohmann::ordered_json doc_;
  mutable std::mutex mu_;
};

std::size_t image_side(std::size_t d) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  return side * side == d ? side : 0;
}

ArchSpec arch_spec(const ExperimentConfig& cfg, const Dataset& ds) {
  if (cfg.arch == Arch::kLeNet) {
    const auto side = image_side(ds.dim());
    if (side == 0) throw ConfigError("lenet needs square images");
    return ArchSpec::lenet(ds.classes, side);
  }
  return ArchSpec::mlp(ds.dim(), ds.classes, cfg.hidden);
}

void write_with_provenance(const ExperimentConfig& cfg, const fs::path& path,
                           const std::string& body) {
  binio::write_file_atomic(path, provenance_line(cfg) + "\n" + body);
}

// Trained points of the current grid, in grid order.
std::vector<GridPoint> trained_points(const ExperimentConfig& cfg, const RunLayout& layout,
                                      std::ostream& log) {
  if (!fs::exists(layout.manifest())) {
    throw MissingArtifactError("no run manifest in " + layout.root.string() + "; run train first");
  }
  RunManifest manifest(layout);
  std::vector<GridPoint> out;
  for (const auto& p : grid_points(cfg)) {
    const auto status = manifest.status(p.id(), point_hash(cfg, p));
    if (status == "ok") {
      out.push_back(p);
    } else if (status == "diverged") {
      log << "skip " << p.id() << ": training diverged\n";
    } else {
      throw MissingArtifactError("grid point " + p.id() + " is not trained under this config");
    }
  }
  return out;
}

}  // namespace

DataSplits load_data(const ExperimentConfig& cfg) {
  DataSplits d;
  if (cfg.dataset == "synthetic") {
    BlobOptions opts;
    opts.spread = cfg.synthetic_spread;
    opts.separation = cfg.synthetic_separation;
    d.train = synthetic_blobs(cfg.synthetic_train, cfg.synthetic_dim, 10,
                              derive_seed(cfg.synthetic_seed, 1), opts);
    d.test = synthetic_blobs(cfg.synthetic_test, cfg.synthetic_dim, 10,
                             derive_seed(cfg.synthetic_seed, 2), opts);
    return d;
  }
  if (cfg.data_dir.empty()) throw DataError("no data directory: set JENS_DATA_DIR or data.dir");
  const fs::path dir = fs::path(cfg.data_dir) / cfg.dataset;
  const auto train_images = find_idx(dir, "train-images-idx3-ubyte");
  const auto train_labels = find_idx(dir, "train-labels-idx1-ubyte");
  const auto test_images = find_idx(dir, "t10k-images-idx3-ubyte");
  const auto test_labels = find_idx(dir, "t10k-labels-idx1-ubyte");
  d.train = load_idx(train_images, train_labels);
  d.test = load_idx(test_images, test_labels);
  if (cfg.train_limit > 0 && cfg.train_limit < d.train.size()) d.train = d.train.head(cfg.train_limit);
  if (cfg.test_limit > 0 && cfg.test_limit < d.test.size()) d.test = d.test.head(cfg.test_limit);
  d.train.name = d.test.name = cfg.dataset;
  return d;
}

std::string provenance_line(const ExperimentConfig& cfg) {
  return "# config_hash=" + hex64(cfg.hash()) + ",master_seed=" + std::to_string(cfg.seed);
}

std::string point_hash(const ExperimentConfig& cfg, const GridPoint& point) {
  const auto base = cfg.canonical_subset({"data.", "model.", "train.epochs", "train.batch_size",
                                          "train.optimizer", "train.lr", "train.momentum",
                                          "train.jacobian", "train.n_proj", "run.seed"});
  return hex64(fnv1a64(base + "point=" + point.id() + "\n"));
}

std::uint64_t point_seed(const ExperimentConfig& cfg, const GridPoint& point) {
  return derive_seed(cfg.seed, fnv1a64(std::string(method_name(point.method)) + "_m" +
                                       std::to_string(point.learners)));
}

fs::path RunLayout::perturbation(const std::string& id, double epsilon) const {
  return root / "perturbations" / id / ("eps_" + eps_tag(epsilon) + ".juap");
}

TrainSummary run_train(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.out};
  const auto data = load_data(cfg);
  const auto spec = arch_spec(cfg, data.train);
  fs::create_directories(layout.records_dir());
  RunManifest manifest(layout);
  manifest.set_config(cfg);
  manifest.save();

  const auto points = grid_points(cfg);
  TrainSummary summary;
  std::mutex mu;
  parallel_for(points.size(), cfg.jobs, [&](std::size_t i) {
    const auto& p = points[i];
    const auto id = p.id();
    const auto hash = point_hash(cfg, p);
    const auto status = manifest.status(id, hash);
    if (status == "ok" && fs::exists(layout.model_dir(id) / "manifest.json")) {
      std::lock_guard lock(mu);
      ++summary.skipped;
      return;
    }
    if (status == "diverged") {
      std::lock_guard lock(mu);
      ++summary.skipped;
      summary.diverged.push_back(id);
      return;
    }
    auto tcfg = cfg.train;
    tcfg.lambda_jr = p.lambda_jr;
    std::vector<TrainRecord> records;
    try {
      const auto ensemble = build_ensemble(p.method, data.train, spec, tcfg, p.learners,
                                           point_seed(cfg, p), 1, &records);
      fs::create_directories(layout.model_dir(id));
      save_ensemble(ensemble, layout.model_dir(id),
                    {{"config_hash", hex64(cfg.hash())},
                     {"master_seed", std::to_string(cfg.seed)},
                     {"point", id},
                     {"point_hash", hash}});
      for (std::size_t r = 0; r < records.size(); ++r) {
        const auto name = records.size() == 1 ? id + ".csv" : id + "_member" + std::to_string(r) + ".csv";
        write_with_provenance(cfg, layout.records_dir() / name, records[r].to_csv());
      }
      manifest.record(id, hash, "ok", "");
      std::lock_guard lock(mu);
      ++summary.trained;
      log << "trained " << id << "\n";
    } catch (const DivergenceError& e) {
      manifest.record(id, hash, "diverged", e.what());
      std::lock_guard lock(mu);
      summary.diverged.push_back(id);
      log << "diverged " << id << ": " << e.what() << "\n";
    }
  });
  std::sort(summary.diverged.begin(), summary.diverged.end());

  std::ostringstream status;
  status << "id,method,learners,lambda_jr,status\n";
  for (const auto& p : points) {
    status << p.id() << ',' << method_name(p.method) << ',' << p.learners << ','
           << full_precision(p.lambda_jr) << ','
           << (std::binary_search(summary.diverged.begin(), summary.diverged.end(), p.id())
                   ? "diverged"
                   : "ok")
           << '\n';
  }
  write_with_provenance(cfg, layout.records_dir() / "train_status.csv", status.str());
  return summary;
}

AttackSummary run_attack(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.out};
  const auto points = trained_points(cfg, layout, log);
  const auto data = load_data(cfg);

  struct Task {
    GridPoint point;
    double epsilon;
  };
  std::vector<Task> tasks;
  for (const auto& p : points) {
    for (double eps : cfg.epsilons) tasks.push_back({p, eps});
  }
  AttackSummary summary;
  std::mutex mu;
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    const auto& [p, eps] = tasks[i];
    const auto id = p.id();
    const auto path = layout.perturbation(id, eps);
    const auto expected = parse_hex64(attack_hash(cfg, p, eps));
    if (fs::exists(path)) {
      try {
        if (load_perturbation(path).config_hash == expected) {
          std::lock_guard lock(mu);
          ++summary.skipped;
          return;
        }
      } catch (const std::exception&) {
        // unreadable or infeasible: recompute
      }
    }
    const auto target = load_ensemble(layout.model_dir(id));
    auto ucfg = cfg.attack;
    ucfg.epsilon = eps;
    try {
      auto sweep = worst_case_uap(target, data.train, data.test, ucfg, cfg.seed, 1);
      sweep.best.config_hash = expected;
      fs::create_directories(path.parent_path());
      save_perturbation(sweep.best, path);
      std::lock_guard lock(mu);
      ++summary.computed;
      log << "attacked " << id << " eps=" << full_precision(eps) << " success="
          << full_precision(sweep.best.success_rate) << "\n";
    } catch (const AttackError& e) {
      std::lock_guard lock(mu);
      summary.failed.push_back(id + "@" + full_precision(eps));
      log << "attack failed " << id << " eps=" << full_precision(eps) << ": " << e.what() << "\n";
    }
  });
  std::sort(summary.failed.begin(), summary.failed.end());

  std::ostringstream csv;
  csv << "id,method,learners,lambda_jr,epsilon,seed,success_rate\n";
  for (const auto& [p, eps] : tasks) {
    const auto path = layout.perturbation(p.id(), eps);
    if (!fs::exists(path)) continue;
    const auto pert = load_perturbation(path);
    csv << p.id() << ',' << method_name(p.method) << ',' << p.learners << ','
        << full_precision(p.lambda_jr) << ',' << full_precision(eps) << ',' << pert.seed << ','
        << full_precision(pert.success_rate) << '\n';
  }
  fs::create_directories(layout.root / "perturbations");
  write_with_provenance(cfg, layout.root / "perturbations" / "attack_summary.csv", csv.str());
  return summary;
}

std::vector<RobustnessReport> collect_reports(const ExperimentConfig& cfg, const DataSplits& data) {
  const RunLayout layout{cfg.out};
  std::ostringstream sink;
  const auto points = trained_points(cfg, layout, sink);
  std::vector<RobustnessReport> reports(points.size());
  parallel_for(points.size(), cfg.jobs, [&](std::size_t i) {
    const auto& p = points[i];
    const auto target = load_ensemble(layout.model_dir(p.id()));
    std::map<double, double> robust;
    for (double eps : cfg.epsilons) {
      const auto path = layout.perturbation(p.id(), eps);
      if (!fs::exists(path)) {
        throw MissingArtifactError("missing perturbation " + path.string() + "; run attack first");
      }
      const auto pert = load_perturbation(path);
      if (pert.config_hash != parse_hex64(attack_hash(cfg, p, eps))) {
        throw MissingArtifactError("stale perturbation " + path.string() + "; rerun attack");
      }
      robust[eps] = robust_accuracy(target, data.test, pert.delta, cfg.attack.clip_inputs);
    }
    reports[i] = make_report({method_name(p.method), p.learners, p.lambda_jr},
                             clean_accuracy(target, data.test), robust, cfg.weighting);
  });
  return reports;
}

std::vector<RobustnessReport> run_eval(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.out};
  const auto data = load_data(cfg);
  auto reports = collect_reports(cfg, data);
  fs::create_directories(layout.results_dir());
  write_with_provenance(cfg, layout.results_dir() / "report.csv", report_csv(reports));
  const auto table = summary_table(reports, cfg.top_k);
  write_with_provenance(cfg, layout.results_dir() / "table.txt", table);
  log << table;
  return reports;
}

void run_report(const ExperimentConfig& cfg, std::ostream& log) {
  const RunLayout layout{cfg.out};
  const auto data = load_data(cfg);
  const auto reports = collect_reports(cfg, data);
  const auto dir = layout.report_dir();
  fs::create_directories(dir / "png");
  write_with_provenance(cfg, dir / "report.csv", report_csv(reports));
  const auto table = summary_table(reports, cfg.top_k);
  write_with_provenance(cfg, dir / "table.txt", table);
  write_with_provenance(cfg, dir / "all_models.txt", report_table(reports));

  // Long-form data behind the lambda sweeps and the clean/robust trade-off.
  std::ostringstream fig;
  fig << "method,learners,lambda_jr,epsilon,clean,robust\n";
  for (const auto& r : reports) {
    for (const auto& [eps, acc] : r.robust_acc) {
      fig << r.model.method << ',' << r.model.learners << ',' << full_precision(r.model.lambda_jr)
          << ',' << full_precision(eps) << ',' << full_precision(r.clean_acc) << ','
          << full_precision(acc) << '\n';
    }
  }
  write_with_provenance(cfg, dir / "figure_data.csv", fig.str());

  std::ostringstream sink;
  const std::size_t d = data.test.dim();
  const std::size_t side = image_side(d);
  const std::size_t w = side ? side : d, h = side ? side : 1;
  for (const auto& p : trained_points(cfg, layout, sink)) {
    for (double eps : cfg.epsilons) {
      const auto pert = load_perturbation(layout.perturbation(p.id(), eps));
      export_perturbation_png(pert, dir / "png" / (p.id() + "_eps" + eps_tag(eps) + ".png"), w, h,
                              {{"config_hash", hex64(cfg.hash())},
                               {"master_seed", std::to_string(cfg.seed)},
                               {"epsilon", full_precision(eps)},
                               {"attack_seed", std::to_string(pert.seed)}});
    }
  }
  log << table;
}

std::string TheoryOptions::canonical() const {
  std::ostringstream out;
  out << "members=" << mc.members << "\nrows=" << mc.rows << "\ncols=" << mc.cols
      << "\nmu=" << full_precision(mc.mu) << "\nsigma=" << full_precision(mc.sigma)
      << "\nsamples=" << mc.samples << "\nseed=" << mc.seed << "\npartitions=" << mc.partitions
      << "\nweights=";
  for (double c : mc.weights) out << full_precision(c) << ' ';
  out << "\nsweep=";
  for (auto m : sweep_members) out << m << ' ';
  out << "\nsweep_mu=" << full_precision(sweep_mu) << "\nsweep_sigma=" << full_precision(sweep_sigma)
      << "\nsweep_samples=" << sweep_samples << "\nproperty=";
  for (auto m : property_members) out << m << ' ';
  out << "\nproperty_count=" << property_count << "\ntamper_lower=" << tamper_lower << "\n";
  return out.str();
}

TheoryOutcome run_verify_theory(const TheoryOptions& opts, std::ostream& log) {
  TheoryOutcome o;
  o.simplex = simplex_property_suite(opts.property_members, opts.property_count, opts.mc.seed);
  log << "simplex property: " << o.simplex.checked << " weight vectors, " << o.simplex.violations
      << " violations\n";

  o.simulation = simulate_bounds(opts.mc, opts.jobs);
  auto bounds = o.simulation.analytic;
  if (opts.tamper_lower) {
    bounds.e_lower *= 1.1;
    log << "debug: E_lower inflated by 10%\n";
  }
  o.checks = judge_bounds(bounds, o.simulation.ensemble, o.simulation.single, opts.mc.members,
                          opts.mc.uniform());
  log << "bounds: mean " << full_precision(o.simulation.ensemble.mean) << " vs E_exact "
      << full_precision(bounds.e_exact) << ", var " << full_precision(o.simulation.ensemble.var)
      << " vs Var_exact " << full_precision(bounds.var_exact) << " -> "
      << (o.checks.passed() ? "pass" : "FAIL") << "\n";

  auto sweep_cfg = opts.mc;
  sweep_cfg.mu = opts.sweep_mu;
  sweep_cfg.sigma = opts.sweep_sigma;
  sweep_cfg.samples = opts.sweep_samples;
  sweep_cfg.weights.clear();
  o.sweep = monotonicity_sweep(sweep_cfg, opts.sweep_members, opts.jobs);
  log << "monotonicity: " << (o.sweep.passed() ? "pass" : "FAIL") << "\n";

  const std::string header = "# config_hash=" + hex64(fnv1a64(opts.canonical())) +
                             ",master_seed=" + std::to_string(opts.mc.seed) +
                             ",normal_sampler=" + kNormalSampler + "\n";
  const auto dir = opts.out / "theory";
  fs::create_directories(dir);

  SimulationResult judged = o.simulation;
  judged.analytic = bounds;
  binio::write_file_atomic(dir / "bounds.csv", header + bounds_csv(judged, opts.mc));
  binio::write_file_atomic(dir / "monotonicity.csv", header + o.sweep.to_csv());
  std::ostringstream simplex;
  simplex << "checked,violations\n" << o.simplex.checked << ',' << o.simplex.violations << '\n';
  binio::write_file_atomic(dir / "simplex.csv", header + simplex.str());
  log << "verify-theory: " << (o.passed() ? "pass" : "FAIL") << "\n";
  return o;
}

}  // namespace jens
