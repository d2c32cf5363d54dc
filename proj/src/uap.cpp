#include "jens/uap.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "jens/binio.hpp"

namespace jens {

void UapConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1]");
  if (iterations < 1) throw std::invalid_argument("iterations must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("attack batch size must be at least 1");
  if (seeds < 1) throw std::invalid_argument("at least one attack seed required");
  if (step_size < 0.0 || !std::isfinite(step_size)) throw std::invalid_argument("bad step size");
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("project_linf: epsilon must be >= 0");
  auto v = delta.to_vector();
  for (auto& e : v) e = std::clamp(e, -epsilon, epsilon);
  return Tensor(delta.shape(), std::move(v));
}

namespace {

Tensor perturbed_inputs(const Tensor& x, const Tensor& delta, bool clip) {
  const std::size_t d = x.dim(1);
  if (delta.size() != d) throw ShapeError("perturbation size does not match input dimension");
  auto v = x.to_vector();
  auto dv = delta.data();
  for (std::size_t k = 0; k < v.size(); ++k) {
    v[k] += dv[k % d];
    if (clip) v[k] = std::clamp(v[k], 0.0, 1.0);
  }
  return Tensor(x.shape(), std::move(v));
}

}  // namespace

double attack_success_rate(const Ensemble& target, const Dataset& ds, const Tensor& delta,
                           bool clip) {
  if (ds.size() == 0) throw std::invalid_argument("attack_success_rate: empty dataset");
  const auto pred = predict(target, perturbed_inputs(ds.images, delta, clip));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != ds.labels[i];
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

ad::Var uap_loss(const BoundEnsemble& target, ad::Var delta, const Tensor& batch,
                 std::span<const std::size_t> labels, bool clip) {
  auto& g = delta.graph();
  const std::size_t rows = batch.dim(0), d = batch.dim(1), c = target.members.front().spec.classes;
  // Broadcast delta over the batch as ones[B,1] x delta[1,D].
  auto z = ad::add(g.constant(batch),
                   ad::matmul(g.constant(Tensor::full({rows, 1}, 1.0)), delta));
  if (clip) {
    // clamp(z, 0, 1) = z * inside + above, with the masks held constant.
    std::vector<double> inside(rows * d), above(rows * d);
    auto zv = z.value().data();
    for (std::size_t k = 0; k < zv.size(); ++k) {
      inside[k] = zv[k] > 0.0 && zv[k] < 1.0 ? 1.0 : 0.0;
      above[k] = zv[k] >= 1.0 ? 1.0 : 0.0;
    }
    z = ad::add(ad::mul(z, g.constant(Tensor({rows, d}, inside))), g.constant(Tensor({rows, d}, above)));
  }
  std::vector<double> onehot(rows * c, 0.0);
  for (std::size_t i = 0; i < rows; ++i) onehot[i * c + labels[i]] = 1.0;
  auto picked = ad::sum(ad::mul(ensemble_log_probs(target, z), g.constant(Tensor({rows, c}, onehot))));
  return ad::scale(picked, -1.0);
}

Perturbation sgd_uap(const Ensemble& target, const Dataset& train, const UapConfig& cfg,
                     std::uint64_t seed, const Dataset* eval) {
  cfg.validate();
  target.validate();
  if (train.size() == 0) throw std::invalid_argument("sgd_uap: empty training set");
  const std::size_t d = target.input_dim();
  if (train.dim() != d) throw ShapeError("sgd_uap: dataset dimension does not match target");

  Rng rng(derive_seed(seed, 0x0a77ac));
  std::vector<double> delta(d);
  for (auto& e : delta) e = rng.uniform(-cfg.epsilon, cfg.epsilon);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(cfg.batch_size, train.size());
  const double step = cfg.step();

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::size_t> idx;
    idx.reserve(batch);
    while (idx.size() < batch) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    std::vector<std::size_t> labels;
    for (auto i : idx) labels.push_back(train.labels[i]);

    ad::Graph g;
    auto bound = bind_ensemble(g, target);
    auto dv = g.leaf(Tensor({1, d}, delta));
    auto loss = uap_loss(bound, dv, train.rows(idx), labels, cfg.clip_inputs);
    const auto grad = ad::grad_values(loss, std::span<const ad::Var>(&dv, 1)).front();
    auto gv = grad.data();
    for (std::size_t k = 0; k < d; ++k) {
      const double s = gv[k] > 0.0 ? 1.0 : (gv[k] < 0.0 ? -1.0 : 0.0);
      delta[k] = std::clamp(delta[k] + step * s, -cfg.epsilon, cfg.epsilon);
    }
  }

  Perturbation p;
  p.delta = Tensor({d}, std::move(delta));
  p.epsilon = cfg.epsilon;
  p.seed = seed;
  p.success_rate = attack_success_rate(target, eval ? *eval : train, p.delta, cfg.clip_inputs);
  return p;
}

UapSweep worst_case_uap(const Ensemble& target, const Dataset& train, const Dataset& test,
                        const UapConfig& cfg, std::uint64_t base_seed, std::size_t jobs) {
  cfg.validate();
  const std::size_t n = cfg.seeds;
  std::vector<std::optional<Perturbation>> results(n);
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (;;) {
      std::size_t s;
      {
        std::lock_guard lock(mu);
        if (fatal || next >= n) return;
        s = next++;
      }
      try {
        results[s] = sgd_uap(target, train, cfg, base_seed + s, &test);
      } catch (const NonFiniteError&) {
        // recorded below as a failed seed
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  UapSweep sweep;
  std::optional<std::size_t> best;
  for (std::size_t s = 0; s < n; ++s) {
    if (!results[s]) {
      sweep.rates.push_back(std::numeric_limits<double>::quiet_NaN());
      sweep.failed_seeds.push_back(base_seed + s);
      continue;
    }
    sweep.rates.push_back(results[s]->success_rate);
    if (!best || results[s]->success_rate > results[*best]->success_rate) best = s;
  }
  if (!best) throw AttackError("every attack seed produced a non-finite loss");
  sweep.best = *results[*best];
  return sweep;
}

// --- persistence ----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'J', 'U', 'A', 'P'};
}

std::string serialize_perturbation(const Perturbation& p) {
  std::string out(kMagic, 4);
  binio::put_u16(out, kPerturbationFormatVersion);
  binio::put_f64(out, p.epsilon);
  binio::put_u64(out, p.seed);
  binio::put_f64(out, p.success_rate);
  binio::put_u64(out, p.config_hash);
  binio::put_u32(out, static_cast<std::uint32_t>(p.delta.size()));
  for (double v : p.delta.data()) binio::put_f64(out, v);
  return out;
}

Perturbation deserialize_perturbation(std::string_view bytes) {
  binio::Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw binio::FormatError("not a perturbation file");
  if (r.u16() != kPerturbationFormatVersion) throw binio::FormatError("unsupported perturbation version");
  Perturbation p;
  p.epsilon = r.f64();
  p.seed = r.u64();
  p.success_rate = r.f64();
  p.config_hash = r.u64();
  const std::size_t d = r.u32();
  if (d == 0) throw binio::FormatError("empty perturbation");
  std::vector<double> v(d);
  for (auto& e : v) e = r.f64();
  if (r.remaining() != 0) throw binio::FormatError("trailing bytes after perturbation");
  if (!(p.epsilon >= 0.0 && p.epsilon <= 1.0)) throw binio::FormatError("bad epsilon");
  for (double e : v) {
    if (!(std::abs(e) <= p.epsilon + 1e-12)) {
      throw binio::FormatError("stored perturbation violates its epsilon bound");
    }
  }
  p.delta = Tensor({d}, std::move(v));
  return p;
}

void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  binio::write_file_atomic(path, serialize_perturbation(p));
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  return deserialize_perturbation(binio::read_file(path));
}

std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, std::size_t width,
                            std::size_t height, const PngText& text) {
  if (width * height != pixels.size() || pixels.empty()) {
    throw std::invalid_argument("png: pixel count does not match width x height");
  }
  auto be32 = [](std::string& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto chunk = [&](std::string& out, const char* type, const std::string& data) {
    be32(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    be32(out, static_cast<std::uint32_t>(
                  crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
  };
  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  be32(ihdr, static_cast<std::uint32_t>(width));
  be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit gray, no interlace
  chunk(png, "IHDR", ihdr);
  for (const auto& [key, value] : text) {
    if (key.empty() || key.size() > 79) throw std::invalid_argument("png: bad text keyword");
    chunk(png, "tEXt", key + '\0' + value);
  }
  std::string raw;
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(pixels.begin() + static_cast<std::ptrdiff_t>(y * width),
               pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * width));
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: compression failed");
  }
  packed.resize(len);
  chunk(png, "IDAT", packed);
  chunk(png, "IEND", "");
  return png;
}

std::vector<std::uint8_t> perturbation_pixels(const Perturbation& p) {
  std::vector<std::uint8_t> px;
  px.reserve(p.delta.size());
  for (double v : p.delta.data()) {
    const double t = p.epsilon > 0.0 ? (v + p.epsilon) / (2.0 * p.epsilon) : 0.5;
    px.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
  }
  return px;
}

void export_perturbation_png(const Perturbation& p, const std::filesystem::path& path,
                             std::size_t width, std::size_t height, const PngText& text) {
  binio::write_file_atomic(path, encode_png_gray(perturbation_pixels(p), width, height, text));
}

}  // namespace jens
