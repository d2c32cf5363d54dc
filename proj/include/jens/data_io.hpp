#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jens/tensor.hpp"

namespace jens {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedPayloadError : public DataError {
 public:
  using DataError::DataError;
};
class CountMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class LabelRangeError : public DataError {
 public:
  using DataError::DataError;
};

// Images as rows of [0,1] pixels, labels in [0, classes).
struct Dataset {
  Tensor images;  // [N, D]
  std::vector<std::size_t> labels;
  std::size_t classes = 10;
  std::size_t height = 0;  // image layout for IDX output; height * width == D
  std::size_t width = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return images.dim(1); }
  void validate() const;

  // Rows at the given indices, in order.
  Tensor rows(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

// --- IDX ------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages parse_idx_images(std::string_view bytes);
std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes);
std::string encode_idx_images(const IdxImages& images);
std::string encode_idx_labels(std::span<const std::uint8_t> labels);

// Reads a file, inflating it when the name ends in ".gz".
std::string read_maybe_gz(const std::filesystem::path& path);

// Pixels are scaled by 1/255 into [0, 1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t classes = 10);
// Inverse of load_idx: pixels are written as round(255 * v).
void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

// --- sampling -------------------------------------------------------------

// N draws with replacement.
Dataset bootstrap_resample(const Dataset& ds, std::uint64_t seed);

struct BlobOptions {
  double base = 0.3;        // background intensity
  double separation = 0.4;  // added on each class's own coordinates
  double spread = 0.15;     // per-pixel Gaussian noise
};

// One Gaussian cluster per class. Class k brightens the coordinates
// j with j mod c == k, so the means are vertices of a scaled simplex.
// Labels are balanced and shuffled; pixels are clipped to [0, 1].
Dataset synthetic_blobs(std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed,
                        const BlobOptions& options = {});

struct BatchPlan {
  std::size_t batch_size = 64;
  std::uint64_t shuffle_seed = 0;
  bool drop_last = false;
};

// Index batches for one epoch. The permutation depends on (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan,
                                                    std::size_t epoch);

}  // namespace jens
