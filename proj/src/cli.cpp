#include "jens/cli.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jens/binio.hpp"
#include "jens/pipeline.hpp"

namespace jens {

namespace {

// Options shared by the experiment subcommands. Named flags are sugar for
// --set section.key=value and take precedence over the config file.
struct ExperimentFlags {
  std::string config_path;
  std::vector<std::string> sets;
  bool paper_scale = false;
  std::map<std::string, std::string> named;  // key -> value, filled by CLI11

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "key=value config file with [sections]");
    cmd->add_option("--set", sets, "override a config key: section.key=value")->take_all();
    cmd->add_flag("--paper-scale", paper_scale, "full protocol: LeNet, full data, 50 attack seeds");
    const std::vector<std::pair<std::string, std::string>> flags{
        {"--out", "run.out"},           {"--seed", "run.seed"},
        {"--jobs", "run.jobs"},         {"--dataset", "data.dataset"},
        {"--data-dir", "data.dir"},     {"--arch", "model.arch"},
        {"--hidden", "model.hidden"},   {"--methods", "train.methods"},
        {"--learners", "train.learners"}, {"--lambdas", "train.lambdas"},
        {"--epochs", "train.epochs"},   {"--epsilons", "attack.epsilons"},
        {"--attack-seeds", "attack.seeds"}, {"--iterations", "attack.iterations"},
    };
    for (const auto& [flag, key] : flags) {
      cmd->add_option_function<std::string>(
          flag, [this, key = key](const std::string& v) { named[key] = v; }, "sets " + key);
    }
  }

  ExperimentConfig resolve() const {
    KeyValues values;
    if (!config_path.empty()) values = load_config_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value");
      values[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : named) values[k] = v;
    return ExperimentConfig::resolve(values, paper_scale);
  }
};

struct TheoryFlags {
  std::string config_path;
  std::optional<std::size_t> members, rows, cols, samples, partitions, sweep_samples, property_count;
  std::optional<double> mu, sigma, sweep_mu, sweep_sigma;
  std::optional<std::uint64_t> seed;
  std::string weights, sweep, property;
  std::string out = "runs/theory";
  std::size_t jobs = 1;
  bool tamper = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "config file; reads the [theory] section");
    cmd->add_option("--members", members, "ensemble size M");
    cmd->add_option("--rows", rows, "Jacobian rows C");
    cmd->add_option("--cols", cols, "Jacobian columns D");
    cmd->add_option("--mu", mu, "entry mean");
    cmd->add_option("--sigma", sigma, "entry standard deviation");
    cmd->add_option("--weights", weights, "comma-separated ensemble weights (default uniform)");
    cmd->add_option("--samples", samples, "Monte Carlo samples");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--partitions", partitions, "RNG stream partitions");
    cmd->add_option("--sweep", sweep, "ensemble sizes for the monotonicity sweep");
    cmd->add_option("--sweep-mu", sweep_mu, "entry mean for the sweep");
    cmd->add_option("--sweep-sigma", sweep_sigma, "entry standard deviation for the sweep");
    cmd->add_option("--sweep-samples", sweep_samples, "samples per sweep point");
    cmd->add_option("--property-members", property, "ensemble sizes for the weight property suite");
    cmd->add_option("--property-count", property_count, "random weight vectors per size");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--debug-tamper-lower", tamper, "negative control: inflate E_lower by 10%");
  }

  TheoryOptions resolve() const {
    TheoryOptions o;
    KeyValues file;
    if (!config_path.empty()) file = load_config_file(config_path);
    auto from_file = [&](const std::string& key) -> std::optional<std::string> {
      const auto it = file.find("theory." + key);
      if (it == file.end()) return std::nullopt;
      return it->second;
    };
    auto num = [&](const std::string& key, double& target) {
      if (auto v = from_file(key)) {
        const auto list = parse_double_list(*v);
        if (list.size() != 1) throw ConfigError("theory." + key + ": expected one number");
        target = list.front();
      }
    };
    auto count = [&](const std::string& key, std::size_t& target) {
      if (auto v = from_file(key)) {
        const auto list = parse_size_list(*v);
        if (list.size() != 1) throw ConfigError("theory." + key + ": expected one integer");
        target = list.front();
      }
    };
    for (const auto& [key, value] : file) {
      static const std::set<std::string> known{
          "theory.members",     "theory.rows",        "theory.cols",          "theory.mu",
          "theory.sigma",       "theory.weights",     "theory.samples",       "theory.seed",
          "theory.partitions",  "theory.sweep",       "theory.sweep_mu",      "theory.sweep_sigma",
          "theory.sweep_samples", "theory.property_members", "theory.property_count"};
      if (key.rfind("theory.", 0) == 0 && !known.count(key)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
    count("members", o.mc.members);
    count("rows", o.mc.rows);
    count("cols", o.mc.cols);
    num("mu", o.mc.mu);
    num("sigma", o.mc.sigma);
    count("samples", o.mc.samples);
    count("partitions", o.mc.partitions);
    num("sweep_mu", o.sweep_mu);
    num("sweep_sigma", o.sweep_sigma);
    count("sweep_samples", o.sweep_samples);
    count("property_count", o.property_count);
    std::size_t file_seed = o.mc.seed;
    count("seed", file_seed);
    o.mc.seed = file_seed;
    if (auto v = from_file("weights")) o.mc.weights = parse_double_list(*v);
    if (auto v = from_file("sweep")) o.sweep_members = parse_size_list(*v);
    if (auto v = from_file("property_members")) o.property_members = parse_size_list(*v);

    if (members) o.mc.members = *members;
    if (rows) o.mc.rows = *rows;
    if (cols) o.mc.cols = *cols;
    if (mu) o.mc.mu = *mu;
    if (sigma) o.mc.sigma = *sigma;
    if (samples) o.mc.samples = *samples;
    if (partitions) o.mc.partitions = *partitions;
    if (seed) o.mc.seed = *seed;
    if (sweep_mu) o.sweep_mu = *sweep_mu;
    if (sweep_sigma) o.sweep_sigma = *sweep_sigma;
    if (sweep_samples) o.sweep_samples = *sweep_samples;
    if (property_count) o.property_count = *property_count;
    if (!weights.empty()) o.mc.weights = parse_double_list(weights);
    if (!sweep.empty()) o.sweep_members = parse_size_list(sweep);
    if (!property.empty()) o.property_members = parse_size_list(property);
    o.out = out;
    o.jobs = jobs;
    o.tamper_lower = tamper;
    try {
      o.mc.validate();
      auto s = o.mc;
      s.mu = o.sweep_mu;
      s.sigma = o.sweep_sigma;
      s.samples = o.sweep_samples;
      s.weights.clear();
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (o.sweep_members.empty() || o.property_members.empty() || o.property_count == 0) {
      throw ConfigError("theory grids must be nonempty");
    }
    return o;
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Jacobian-regularized ensembles against universal adversarial perturbations", "jens"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  ExperimentFlags train_flags, attack_flags, eval_flags, report_flags;
  TheoryFlags theory_flags;
  auto* train_cmd = app.add_subcommand("train", "train every (method, M, lambda) grid point");
  auto* attack_cmd = app.add_subcommand("attack", "worst-case UAP per trained model and epsilon");
  auto* eval_cmd = app.add_subcommand("eval", "robustness report CSV and summary table");
  auto* theory_cmd =
      app.add_subcommand("verify-theory", "Monte Carlo and exact checks of the variance bounds");
  auto* report_cmd =
      app.add_subcommand("report", "regenerate tables, figure data and PNGs from saved artifacts");
  train_flags.attach(train_cmd);
  attack_flags.attach(attack_cmd);
  eval_flags.attach(eval_cmd);
  report_flags.attach(report_cmd);
  theory_flags.attach(theory_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (theory_cmd->parsed()) {
      const auto outcome = run_verify_theory(theory_flags.resolve(), out);
      return outcome.passed() ? kExitOk : kExitVerification;
    }
    if (train_cmd->parsed()) {
      const auto s = run_train(train_flags.resolve(), out);
      out << "train: " << s.trained << " trained, " << s.skipped << " skipped, "
          << s.diverged.size() << " diverged\n";
      return s.diverged.empty() ? kExitOk : kExitDivergence;
    }
    if (attack_cmd->parsed()) {
      const auto s = run_attack(attack_flags.resolve(), out);
      out << "attack: " << s.computed << " computed, " << s.skipped << " skipped, "
          << s.failed.size() << " failed\n";
      return s.failed.empty() ? kExitOk : kExitDivergence;
    }
    if (eval_cmd->parsed()) {
      run_eval(eval_flags.resolve(), out);
      return kExitOk;
    }
    if (report_cmd->parsed()) {
      run_report(report_flags.resolve(), out);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const binio::FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const binio::IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace jens
