#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jens/data_io.hpp"
#include "jens/ensemble.hpp"

namespace jens {

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UapConfig {
  double epsilon = 0.1;
  std::size_t iterations = 100;
  std::size_t batch_size = 200;
  double step_size = 0.0;  // 0 means epsilon / 10
  std::size_t seeds = 50;
  bool clip_inputs = true;

  double step() const { return step_size > 0.0 ? step_size : epsilon / 10.0; }
  void validate() const;
};

struct Perturbation {
  Tensor delta;  // [D]
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
  std::uint64_t config_hash = 0;
};

// Coordinate-wise clamp to [-epsilon, epsilon].
Tensor project_linf(const Tensor& delta, double epsilon);

// Fraction of inputs with predict(x + delta) != label; x + delta is clamped
// to [0, 1] when clip is set.
double attack_success_rate(const Ensemble& target, const Dataset& ds, const Tensor& delta,
                           bool clip = true);

// Sum over the batch of the cross-entropy of the aggregated output at
// clamp(x + delta); delta is [1, D]. Exposed for tests and diagnostics.
ad::Var uap_loss(const BoundEnsemble& target, ad::Var delta, const Tensor& batch,
                 std::span<const std::size_t> labels, bool clip);

// Sign-gradient ascent from a uniform start in the epsilon ball. The success
// rate is measured on `eval` when given, otherwise on `train`.
// Throws NonFiniteError if the loss stops being finite.
Perturbation sgd_uap(const Ensemble& target, const Dataset& train, const UapConfig& cfg,
                     std::uint64_t seed, const Dataset* eval = nullptr);

struct UapSweep {
  Perturbation best;
  std::vector<double> rates;  // per seed, NaN where the seed failed
  std::vector<std::uint64_t> failed_seeds;
};

// Runs seeds base_seed .. base_seed + cfg.seeds - 1 and keeps the highest
// test success rate, ties to the lowest seed.
UapSweep worst_case_uap(const Ensemble& target, const Dataset& train, const Dataset& test,
                        const UapConfig& cfg, std::uint64_t base_seed = 0,
                        std::size_t jobs = 1);

// --- persistence ----------------------------------------------------------

inline constexpr std::uint16_t kPerturbationFormatVersion = 1;

std::string serialize_perturbation(const Perturbation& p);
// Rejects payloads whose delta leaves the stored epsilon ball.
Perturbation deserialize_perturbation(std::string_view bytes);
void save_perturbation(const Perturbation& p, const std::filesystem::path& path);
Perturbation load_perturbation(const std::filesystem::path& path);

using PngText = std::vector<std::pair<std::string, std::string>>;

// 8-bit grayscale PNG; text entries become tEXt chunks.
std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, std::size_t width,
                            std::size_t height, const PngText& text = {});
// Maps [-epsilon, epsilon] linearly to [0, 255].
std::vector<std::uint8_t> perturbation_pixels(const Perturbation& p);
void export_perturbation_png(const Perturbation& p, const std::filesystem::path& path,
                             std::size_t width, std::size_t height, const PngText& text = {});

}  // namespace jens
