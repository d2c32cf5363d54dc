#include "jens/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "jens/binio.hpp"
#include "jens/format.hpp"

namespace jens {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto t = trim(v);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto t = trim(v);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <class T>
std::string join(const std::vector<T>& items, std::function<std::string(const T&)> fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += fmt(items[i]);
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  return join<std::size_t>(v, [](const std::size_t& x) { return std::to_string(x); });
}

std::string join_doubles(const std::vector<double>& v) {
  return join<double>(v, [](const double& x) { return full_precision(x); });
}

}  // namespace

KeyValues parse_config_text(std::string_view text) {
  KeyValues out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues load_config_file(const std::filesystem::path& path) {
  try {
    return parse_config_text(binio::read_file(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double("list", item));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(to_u64("list", item));
  return out;
}

ExperimentConfig ExperimentConfig::resolve(const KeyValues& values, bool paper_scale) {
  ExperimentConfig c;
  c.paper_scale = paper_scale;
  if (const char* env = std::getenv("JENS_DATA_DIR")) c.data_dir = env;
  if (paper_scale) {
    c.dataset = "mnist";
    c.arch = Arch::kLeNet;
    c.train_limit = 0;
    c.test_limit = 0;
  }
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };
  // Architecture decides the optimizer defaults, so it is read first.
  if (auto v = get("model.arch")) {
    try {
      c.arch = parse_arch(*v);
    } catch (const std::exception&) {
      throw ConfigError("model.arch: unknown architecture '" + *v + "'");
    }
  }
  c.train = TrainConfig::defaults_for(c.arch);
  c.train.epochs = 10;
  c.attack.seeds = paper_scale ? 50 : 5;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"data.dataset", [&](auto&, auto& v) { c.dataset = trim(v); }},
      {"data.dir", [&](auto&, auto& v) { c.data_dir = trim(v); }},
      {"data.train_limit", [&](auto& k, auto& v) { c.train_limit = to_u64(k, v); }},
      {"data.test_limit", [&](auto& k, auto& v) { c.test_limit = to_u64(k, v); }},
      {"data.synthetic_train", [&](auto& k, auto& v) { c.synthetic_train = to_u64(k, v); }},
      {"data.synthetic_test", [&](auto& k, auto& v) { c.synthetic_test = to_u64(k, v); }},
      {"data.synthetic_dim", [&](auto& k, auto& v) { c.synthetic_dim = to_u64(k, v); }},
      {"data.synthetic_spread", [&](auto& k, auto& v) { c.synthetic_spread = to_double(k, v); }},
      {"data.synthetic_separation",
       [&](auto& k, auto& v) { c.synthetic_separation = to_double(k, v); }},
      {"data.synthetic_seed", [&](auto& k, auto& v) { c.synthetic_seed = to_u64(k, v); }},
      {"model.arch", [](auto&, auto&) {}},
      {"model.hidden",
       [&](auto& k, auto& v) {
         try {
           c.hidden = parse_size_list(v);
         } catch (const ConfigError&) {
           throw ConfigError(k + ": expected a list of layer widths");
         }
       }},
      {"train.methods",
       [&](auto& k, auto& v) {
         c.methods.clear();
         for (const auto& m : split_list(v)) {
           try {
             c.methods.push_back(parse_method(m));
           } catch (const std::exception&) {
             throw ConfigError(k + ": unknown method '" + m + "'");
           }
         }
       }},
      {"train.learners", [&](auto&, auto& v) { c.learners = parse_size_list(v); }},
      {"train.lambdas", [&](auto&, auto& v) { c.lambdas = parse_double_list(v); }},
      {"train.epochs", [&](auto& k, auto& v) { c.train.epochs = to_u64(k, v); }},
      {"train.batch_size", [&](auto& k, auto& v) { c.train.batch_size = to_u64(k, v); }},
      {"train.optimizer",
       [&](auto& k, auto& v) {
         try {
           c.train.optimizer.kind = parse_optimizer(trim(v));
         } catch (const std::exception&) {
           throw ConfigError(k + ": unknown optimizer '" + v + "'");
         }
       }},
      {"train.lr", [&](auto& k, auto& v) { c.train.optimizer.lr = to_double(k, v); }},
      {"train.momentum", [&](auto& k, auto& v) { c.train.optimizer.momentum = to_double(k, v); }},
      {"train.jacobian",
       [&](auto& k, auto& v) {
         try {
           c.train.jacobian_mode = parse_jacobian_mode(trim(v));
         } catch (const std::exception&) {
           throw ConfigError(k + ": unknown Jacobian mode '" + v + "'");
         }
       }},
      {"train.n_proj", [&](auto& k, auto& v) { c.train.n_proj = to_u64(k, v); }},
      {"attack.epsilons", [&](auto&, auto& v) { c.epsilons = parse_double_list(v); }},
      {"attack.seeds", [&](auto& k, auto& v) { c.attack.seeds = to_u64(k, v); }},
      {"attack.iterations", [&](auto& k, auto& v) { c.attack.iterations = to_u64(k, v); }},
      {"attack.batch_size", [&](auto& k, auto& v) { c.attack.batch_size = to_u64(k, v); }},
      {"attack.step_size", [&](auto& k, auto& v) { c.attack.step_size = to_double(k, v); }},
      {"attack.clip", [&](auto& k, auto& v) { c.attack.clip_inputs = to_bool(k, v); }},
      {"eval.weighting", [&](auto& k, auto& v) { c.weighting = to_double(k, v); }},
      {"eval.top_k", [&](auto& k, auto& v) { c.top_k = to_u64(k, v); }},
      {"run.seed", [&](auto& k, auto& v) { c.seed = to_u64(k, v); }},
      {"run.out", [&](auto&, auto& v) { c.out = trim(v); }},
      {"run.jobs", [&](auto& k, auto& v) { c.jobs = to_u64(k, v); }},
  };
  for (const auto& [key, value] : values) {
    if (key.rfind("theory.", 0) == 0) continue;  // read by verify-theory
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(key, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (dataset != "mnist" && dataset != "fashion_mnist" && dataset != "synthetic") {
    throw ConfigError("data.dataset must be mnist, fashion_mnist or synthetic");
  }
  if (methods.empty() || learners.empty() || lambdas.empty() || epsilons.empty()) {
    throw ConfigError("grids must be nonempty");
  }
  for (auto m : learners) {
    if (m < 1) throw ConfigError("train.learners: every M must be at least 1");
  }
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("train.lambdas: lambda must be non-negative");
  }
  for (double e : epsilons) {
    if (!(e > 0.0 && e <= 1.0)) throw ConfigError("attack.epsilons: epsilon must lie in (0, 1]");
  }
  if (dataset == "synthetic" && (synthetic_train < 10 || synthetic_test < 1 || synthetic_dim < 1)) {
    throw ConfigError("synthetic dataset sizes are too small");
  }
  if (arch == Arch::kMlp && hidden.empty()) throw ConfigError("model.hidden must be nonempty");
  if (!(weighting >= 0.0 && weighting <= 1.0)) throw ConfigError("eval.weighting must lie in [0, 1]");
  if (jobs < 1) throw ConfigError("run.jobs must be at least 1");
  try {
    auto t = train;
    t.lambda_jr = 0.0;
    t.validate();
    auto a = attack;
    a.epsilon = epsilons.front();
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::canonical() const {
  KeyValues kv;
  kv["data.dataset"] = dataset;
  if (dataset == "synthetic") {
    kv["data.synthetic_train"] = std::to_string(synthetic_train);
    kv["data.synthetic_test"] = std::to_string(synthetic_test);
    kv["data.synthetic_dim"] = std::to_string(synthetic_dim);
    kv["data.synthetic_spread"] = full_precision(synthetic_spread);
    kv["data.synthetic_separation"] = full_precision(synthetic_separation);
    kv["data.synthetic_seed"] = std::to_string(synthetic_seed);
  } else {
    kv["data.train_limit"] = std::to_string(train_limit);
    kv["data.test_limit"] = std::to_string(test_limit);
  }
  kv["model.arch"] = arch_name(arch);
  if (arch == Arch::kMlp) kv["model.hidden"] = join_sizes(hidden);
  kv["train.methods"] = join<EnsembleMethod>(
      methods, [](const EnsembleMethod& m) { return std::string(method_name(m)); });
  kv["train.learners"] = join_sizes(learners);
  kv["train.lambdas"] = join_doubles(lambdas);
  kv["train.epochs"] = std::to_string(train.epochs);
  kv["train.batch_size"] = std::to_string(train.batch_size);
  kv["train.optimizer"] = optimizer_name(train.optimizer.kind);
  kv["train.lr"] = full_precision(train.optimizer.lr);
  kv["train.momentum"] = full_precision(train.optimizer.momentum);
  kv["train.jacobian"] = jacobian_mode_name(train.jacobian_mode);
  kv["train.n_proj"] = std::to_string(train.n_proj);
  kv["attack.epsilons"] = join_doubles(epsilons);
  kv["attack.seeds"] = std::to_string(attack.seeds);
  kv["attack.iterations"] = std::to_string(attack.iterations);
  kv["attack.batch_size"] = std::to_string(attack.batch_size);
  kv["attack.step_size"] = full_precision(attack.step_size);
  kv["attack.clip"] = attack.clip_inputs ? "1" : "0";
  kv["eval.weighting"] = full_precision(weighting);
  kv["eval.top_k"] = std::to_string(top_k);
  kv["run.seed"] = std::to_string(seed);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical()); }

std::string ExperimentConfig::canonical_subset(
    std::initializer_list<std::string_view> prefixes) const {
  std::string out;
  std::istringstream in(canonical());
  std::string line;
  while (std::getline(in, line)) {
    for (auto p : prefixes) {
      if (line.rfind(p, 0) == 0) {
        out += line + "\n";
        break;
      }
    }
  }
  return out;
}

std::string GridPoint::id() const {
  return std::string(method_name(method)) + "_m" + std::to_string(learners) + "_lam" +
         full_precision(lambda_jr);
}

std::vector<GridPoint> grid_points(const ExperimentConfig& cfg) {
  std::vector<GridPoint> out;
  for (auto method : cfg.methods) {
    for (auto m : cfg.learners) {
      const bool single = method == EnsembleMethod::kSingle;
      if (single != (m == 1)) continue;
      for (double lam : cfg.lambdas) out.push_back({method, m, lam});
    }
  }
  return out;
}

}  // namespace jens
