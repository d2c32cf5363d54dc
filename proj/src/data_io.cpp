#include "jens/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jens/binio.hpp"
#include "jens/rng.hpp"

namespace jens {

namespace {

std::uint32_t read_be32(std::string_view bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw TruncatedPayloadError("IDX header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

bool ends_with_gz(const std::filesystem::path& path) { return path.extension() == ".gz"; }

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 2) throw DataError("dataset images must be [N, D]");
  if (images.dim(0) != labels.size()) {
    throw CountMismatchError("image count " + std::to_string(images.dim(0)) +
                             " differs from label count " + std::to_string(labels.size()));
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel outside [0, 1]");
  }
  for (auto l : labels) {
    if (l >= classes) throw LabelRangeError("label " + std::to_string(l) + " out of range");
  }
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  std::vector<double> out;
  out.reserve(indices.size() * d);
  auto data = images.data();
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("dataset row index out of range");
    out.insert(out.end(), data.begin() + static_cast<std::ptrdiff_t>(i * d),
               data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return Tensor({indices.size(), d}, std::move(out));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = rows(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  out.classes = classes;
  out.height = height;
  out.width = width;
  out.name = name;
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

IdxImages parse_idx_images(std::string_view bytes) {
  if (read_be32(bytes, 0) != kIdxImagesMagic) throw BadMagicError("bad IDX image magic");
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::size_t payload = out.count * out.rows * out.cols;
  if (bytes.size() - 16 < payload) {
    throw TruncatedPayloadError("IDX image payload truncated: expected " +
                                std::to_string(payload) + " bytes");
  }
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes) {
  if (read_be32(bytes, 0) != kIdxLabelsMagic) throw BadMagicError("bad IDX label magic");
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) throw TruncatedPayloadError("IDX label payload truncated");
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

std::string encode_idx_images(const IdxImages& images) {
  std::string out;
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.append(images.pixels.begin(), images.pixels.end());
  return out;
}

std::string encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::string out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(labels.begin(), labels.end());
  return out;
}

std::string read_maybe_gz(const std::filesystem::path& path) {
  if (!ends_with_gz(path)) {
    try {
      return binio::read_file(path);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw TruncatedPayloadError("corrupt gzip stream in " + path.string());
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t classes) {
  const auto images = parse_idx_images(read_maybe_gz(images_path));
  const auto labels = parse_idx_labels(read_maybe_gz(labels_path));
  if (images.count != labels.size()) {
    throw CountMismatchError(std::to_string(images.count) + " images but " +
                             std::to_string(labels.size()) + " labels");
  }
  if (images.count == 0 || images.rows * images.cols == 0) throw DataError("empty IDX dataset");
  Dataset ds;
  ds.classes = classes;
  ds.height = images.rows;
  ds.width = images.cols;
  ds.name = images_path.filename().string();
  std::vector<double> px(images.pixels.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = images.pixels[i] / 255.0;
  ds.images = Tensor({images.count, images.rows * images.cols}, std::move(px));
  ds.labels.reserve(labels.size());
  for (auto l : labels) {
    if (l >= classes) throw LabelRangeError("label byte " + std::to_string(l) + " out of range");
    ds.labels.push_back(l);
  }
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  ds.validate();
  IdxImages images;
  images.count = ds.size();
  images.rows = ds.height ? ds.height : 1;
  images.cols = ds.width ? ds.width : ds.dim();
  if (images.rows * images.cols != ds.dim()) throw DataError("image layout does not match D");
  images.pixels.reserve(ds.images.size());
  for (double v : ds.images.data()) {
    images.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  std::vector<std::uint8_t> labels;
  for (auto l : ds.labels) {
    if (l > 255) throw LabelRangeError("label does not fit a byte");
    labels.push_back(static_cast<std::uint8_t>(l));
  }
  auto write = [](const std::filesystem::path& path, const std::string& bytes) {
    if (!ends_with_gz(path)) {
      binio::write_file_atomic(path, bytes);
      return;
    }
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (n != static_cast<int>(bytes.size())) throw DataError("short gzip write to " + path.string());
  };
  write(images_path, encode_idx_images(images));
  write(labels_path, encode_idx_labels(labels));
}

Dataset bootstrap_resample(const Dataset& ds, std::uint64_t seed) {
  if (ds.size() == 0) throw DataError("bootstrap of an empty dataset");
  Rng rng(seed);
  std::vector<std::size_t> idx(ds.size());
  for (auto& i : idx) i = rng.index(ds.size());
  return ds.subset(idx);
}

Dataset synthetic_blobs(std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed,
                        const BlobOptions& options) {
  if (c < 2) throw DataError("synthetic_blobs needs at least two classes");
  if (n == 0 || d == 0) throw DataError("synthetic_blobs needs n, d >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.classes = c;
  ds.name = "synthetic";
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  if (side * side == d) {
    ds.height = ds.width = side;
  } else {
    ds.height = 1;
    ds.width = d;
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = i % c;
  rng.shuffle(std::span<std::size_t>(ds.labels));
  std::vector<double> px(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = options.base + (j % c == ds.labels[i] ? options.separation : 0.0);
      px[i * d + j] = std::clamp(rng.normal(mean, options.spread), 0.0, 1.0);
    }
  }
  ds.images = Tensor({n, d}, std::move(px));
  return ds;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan,
                                                    std::size_t epoch) {
  if (plan.batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(plan.shuffle_seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < n; begin += plan.batch_size) {
    const std::size_t end = std::min(n, begin + plan.batch_size);
    if (plan.drop_last && end - begin < plan.batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace jens
