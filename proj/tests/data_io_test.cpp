#include "jens/data_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "jens/binio.hpp"

namespace fs = std::filesystem;
using namespace jens;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("jens_data_" + tag + "_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string images_bytes(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                         std::uint8_t fill) {
  IdxImages im;
  im.count = count;
  im.rows = rows;
  im.cols = cols;
  im.pixels.assign(std::size_t{count} * rows * cols, fill);
  return encode_idx_images(im);
}

}  // namespace

TEST(Idx, HeaderBytesAreBigEndian) {
  auto bytes = images_bytes(2, 28, 28, 0);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), std::string("\x00\x00\x08\x03", 4));
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x00\x00\x00\x02", 4));
  EXPECT_EQ(bytes.size(), 16u + 2 * 784);
  auto labels = encode_idx_labels(std::vector<std::uint8_t>{3, 4});
  EXPECT_EQ(labels.substr(0, 4), std::string("\x00\x00\x08\x01", 4));
}

TEST(Idx, LoadScalesPixelsAndReadsLayout) {
  auto dir = temp_dir("scale");
  IdxImages im{2, 28, 28, std::vector<std::uint8_t>(2 * 784, 0)};
  im.pixels[0] = 255;
  im.pixels[784 + 783] = 51;
  binio::write_file_atomic(dir / "img", encode_idx_images(im));
  binio::write_file_atomic(dir / "lbl", encode_idx_labels(std::vector<std::uint8_t>{7, 0}));
  auto ds = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 784u);
  EXPECT_EQ(ds.height, 28u);
  EXPECT_EQ(ds.width, 28u);
  EXPECT_EQ(ds.images[0], 1.0);
  EXPECT_EQ(ds.images[1], 0.0);
  EXPECT_DOUBLE_EQ(ds.images[784 + 783], 0.2);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{7, 0}));
  fs::remove_all(dir);
}

TEST(Idx, DistinctErrorsForEachCorruption) {
  auto good = images_bytes(3, 2, 2, 9);
  auto bad_magic = good;
  bad_magic[3] = 0x04;
  EXPECT_THROW(parse_idx_images(bad_magic), BadMagicError);
  EXPECT_THROW(parse_idx_images(good.substr(0, good.size() - 1)), TruncatedPayloadError);
  EXPECT_THROW(parse_idx_images(good.substr(0, 10)), TruncatedPayloadError);
  EXPECT_THROW(parse_idx_labels(good), BadMagicError);

  auto dir = temp_dir("errors");
  binio::write_file_atomic(dir / "img", good);
  binio::write_file_atomic(dir / "two", encode_idx_labels(std::vector<std::uint8_t>{1, 2}));
  binio::write_file_atomic(dir / "range", encode_idx_labels(std::vector<std::uint8_t>{1, 10, 2}));
  EXPECT_THROW(load_idx(dir / "img", dir / "two"), CountMismatchError);
  EXPECT_THROW(load_idx(dir / "img", dir / "range"), LabelRangeError);
  EXPECT_THROW(load_idx(dir / "missing", dir / "two"), DataError);
  fs::remove_all(dir);
}

TEST(Idx, RoundTripReproducesPayloadBytes) {
  IdxImages im{5, 3, 4, {}};
  for (std::size_t i = 0; i < 5 * 12; ++i) im.pixels.push_back(static_cast<std::uint8_t>(i * 37 % 256));
  const auto img = encode_idx_images(im);
  const auto lbl = encode_idx_labels(std::vector<std::uint8_t>{0, 9, 3, 3, 1});
  auto dir = temp_dir("roundtrip");
  binio::write_file_atomic(dir / "img", img);
  binio::write_file_atomic(dir / "lbl", lbl);
  auto ds = load_idx(dir / "img", dir / "lbl");
  save_idx(ds, dir / "img2", dir / "lbl2");
  EXPECT_EQ(binio::read_file(dir / "img2"), img);
  EXPECT_EQ(binio::read_file(dir / "lbl2"), lbl);

  save_idx(ds, dir / "img.gz", dir / "lbl.gz");
  EXPECT_NE(binio::read_file(dir / "img.gz"), img);
  auto back = load_idx(dir / "img.gz", dir / "lbl.gz");
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
  fs::remove_all(dir);
}

TEST(Dataset, SubsetAndRows) {
  auto ds = synthetic_blobs(10, 4, 2, 1);
  std::vector<std::size_t> idx{3, 3, 0};
  auto sub = ds.subset(idx);
  ASSERT_EQ(sub.size(), 3u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(sub.images[j], ds.images[3 * 4 + j]);
    EXPECT_EQ(sub.images[4 + j], ds.images[3 * 4 + j]);
    EXPECT_EQ(sub.images[8 + j], ds.images[j]);
  }
  EXPECT_EQ(sub.labels[2], ds.labels[0]);
  std::vector<std::size_t> oob{10};
  EXPECT_THROW(ds.rows(oob), std::out_of_range);
  EXPECT_EQ(ds.head(100).size(), 10u);
}

TEST(Bootstrap, UniqueFractionNearOneMinusInverseE) {
  const std::size_t n = 10000;
  auto ds = synthetic_blobs(n, 1, 2, 5);
  // Tag each row by its index so resampled rows can be identified.
  std::vector<double> tags(n);
  for (std::size_t i = 0; i < n; ++i) tags[i] = static_cast<double>(i) / n;
  ds.images = Tensor({n, 1}, tags);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto boot = bootstrap_resample(ds, seed);
    ASSERT_EQ(boot.size(), n);
    std::set<double> unique(boot.images.data().begin(), boot.images.data().end());
    const double frac = static_cast<double>(unique.size()) / n;
    EXPECT_NEAR(frac, 1.0 - std::exp(-1.0), 0.01) << "seed " << seed;
  }
  EXPECT_EQ(bootstrap_resample(ds, 4).images, bootstrap_resample(ds, 4).images);
  EXPECT_NE(bootstrap_resample(ds, 4).images, bootstrap_resample(ds, 5).images);
}

TEST(Batching, EveryIndexOncePerEpoch) {
  BatchPlan plan{7, 11, false};
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    auto batches = epoch_batches(50, plan, epoch);
    ASSERT_EQ(batches.size(), 8u);
    std::vector<int> seen(50, 0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      EXPECT_EQ(batches[b].size(), b + 1 < batches.size() ? 7u : 1u);
      for (auto i : batches[b]) ++seen[i];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
  EXPECT_NE(epoch_batches(50, plan, 0), epoch_batches(50, plan, 1));
  EXPECT_EQ(epoch_batches(50, plan, 2), epoch_batches(50, plan, 2));
}

TEST(Batching, DropLastAndValidation) {
  BatchPlan plan{7, 0, true};
  auto batches = epoch_batches(50, plan, 0);
  EXPECT_EQ(batches.size(), 7u);
  for (auto& b : batches) EXPECT_EQ(b.size(), 7u);
  plan.batch_size = 0;
  EXPECT_THROW(epoch_batches(10, plan, 0), std::invalid_argument);
}

TEST(SyntheticBlobs, BalancedBoundedDeterministic) {
  auto a = synthetic_blobs(100, 16, 4, 9);
  auto b = synthetic_blobs(100, 16, 4, 9);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.height, 4u);
  std::vector<int> counts(4, 0);
  for (auto l : a.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 25);
  EXPECT_THROW(synthetic_blobs(10, 4, 1, 0), DataError);
}

TEST(SyntheticBlobs, NearestMeanSeparatesClasses) {
  const std::size_t n = 400, d = 20, c = 4;
  BlobOptions opt;
  auto ds = synthetic_blobs(n, d, c, 3, opt);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_dist = 1e300;
    for (std::size_t k = 0; k < c; ++k) {
      double dist = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double mean = opt.base + (j % c == k ? opt.separation : 0.0);
        dist += std::pow(ds.images[i * d + j] - mean, 2);
      }
      if (dist < best_dist) best_dist = dist, best = k;
    }
    correct += best == ds.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / n, 0.95);
}
