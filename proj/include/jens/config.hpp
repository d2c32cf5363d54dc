#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jens/ensemble.hpp"
#include "jens/models.hpp"
#include "jens/training.hpp"
#include "jens/uap.hpp"

namespace jens {

// Bad configuration or command line; maps to the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "section.key" -> raw value. Keys outside any section have no prefix.
using KeyValues = std::map<std::string, std::string>;

// Flat key=value text with [section] headers; '#' and ';' start comments.
KeyValues parse_config_text(std::string_view text);
KeyValues load_config_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

std::vector<double> parse_double_list(const std::string& text);
std::vector<std::size_t> parse_size_list(const std::string& text);

struct ExperimentConfig {
  // [data]
  std::string dataset = "synthetic";  // mnist | fashion_mnist | synthetic
  std::string data_dir;               // defaults to $JENS_DATA_DIR
  std::size_t train_limit = 10000;    // 0 keeps every row
  std::size_t test_limit = 10000;
  std::size_t synthetic_train = 2000;
  std::size_t synthetic_test = 1000;
  std::size_t synthetic_dim = 64;
  double synthetic_spread = 0.2;
  double synthetic_separation = 0.4;
  std::uint64_t synthetic_seed = 7;

  // [model]
  Arch arch = Arch::kMlp;
  std::vector<std::size_t> hidden = {64};

  // [train]
  std::vector<EnsembleMethod> methods = {EnsembleMethod::kSingle, EnsembleMethod::kBagging,
                                         EnsembleMethod::kSnapshot, EnsembleMethod::kSoftvote};
  std::vector<std::size_t> learners = {1, 3, 6, 9};
  std::vector<double> lambdas = {0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  TrainConfig train;

  // [attack]
  std::vector<double> epsilons = {0.10, 0.15, 0.20, 0.25};
  UapConfig attack;

  // [eval]
  double weighting = 0.5;
  std::size_t top_k = 3;

  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  std::size_t jobs = 1;
  bool paper_scale = false;

  // Desk-scale defaults, or the full protocol when paper_scale is set,
  // overridden by `values`. Unknown keys and malformed values throw ConfigError.
  static ExperimentConfig resolve(const KeyValues& values, bool paper_scale);

  void validate() const;
  // Every result-affecting key in canonical "key=value\n" form, sorted.
  std::string canonical() const;
  std::uint64_t hash() const;  // FNV-1a of canonical()
  // Canonical form restricted to keys whose prefix is listed.
  std::string canonical_subset(std::initializer_list<std::string_view> prefixes) const;
};

// One trained artifact of the sweep.
struct GridPoint {
  EnsembleMethod method = EnsembleMethod::kSingle;
  std::size_t learners = 1;
  double lambda_jr = 0.0;

  std::string id() const;  // e.g. "snapshot_m3_lam0.1"
};

// Single takes M = 1; ensemble methods take every M > 1 of the grid.
std::vector<GridPoint> grid_points(const ExperimentConfig& cfg);

}  // namespace jens
