#include "jens/models.hpp"

#include <algorithm>
#include <cmath>

namespace jens {

namespace {

constexpr std::size_t kConv1Filters = 6;
constexpr std::size_t kConv2Filters = 16;
constexpr std::size_t kKernel = 5;
constexpr std::size_t kDense1 = 120;
constexpr std::size_t kDense2 = 84;
constexpr std::size_t kEvalChunk = 1024;

struct LeNetDims {
  std::size_t conv1_out, pool1_out, conv2_out, pool2_out, flat;
};

LeNetDims lenet_dims(std::size_t side) {
  if (side < 16) throw InvalidSpec("lenet: image side must be at least 16");
  LeNetDims d{};
  d.conv1_out = side - kKernel + 1;
  if (d.conv1_out % 2) throw InvalidSpec("lenet: first conv output must be even");
  d.pool1_out = d.conv1_out / 2;
  d.conv2_out = d.pool1_out - kKernel + 1;
  if (d.conv2_out % 2) throw InvalidSpec("lenet: second conv output must be even");
  d.pool2_out = d.conv2_out / 2;
  d.flat = kConv2Filters * d.pool2_out * d.pool2_out;
  return d;
}

}  // namespace

const char* arch_name(Arch arch) { return arch == Arch::kMlp ? "mlp" : "lenet"; }

Arch parse_arch(const std::string& name) {
  if (name == "mlp") return Arch::kMlp;
  if (name == "lenet") return Arch::kLeNet;
  throw InvalidSpec("unknown architecture '" + name + "'");
}

ArchSpec ArchSpec::mlp(std::size_t input_dim, std::size_t classes,
                       std::vector<std::size_t> hidden) {
  ArchSpec s;
  s.arch = Arch::kMlp;
  s.input_dim = input_dim;
  s.classes = classes;
  s.hidden = std::move(hidden);
  return s;
}

ArchSpec ArchSpec::lenet(std::size_t classes, std::size_t image_side) {
  ArchSpec s;
  s.arch = Arch::kLeNet;
  s.input_dim = image_side * image_side;
  s.classes = classes;
  s.hidden.clear();
  s.image_side = image_side;
  return s;
}

void ArchSpec::validate() const {
  if (input_dim == 0) throw InvalidSpec("input_dim must be positive");
  if (classes < 2) throw InvalidSpec("at least two classes required");
  if (arch == Arch::kMlp) {
    for (auto h : hidden)
      if (h == 0) throw InvalidSpec("mlp: hidden widths must be positive");
  } else {
    if (image_side * image_side != input_dim) {
      throw InvalidSpec("lenet: input_dim must equal image_side^2");
    }
    lenet_dims(image_side);
  }
}

std::vector<Shape> param_shapes(const ArchSpec& spec) {
  spec.validate();
  std::vector<Shape> shapes;
  if (spec.arch == Arch::kMlp) {
    std::size_t in = spec.input_dim;
    for (auto h : spec.hidden) {
      shapes.push_back({in, h});
      shapes.push_back({h});
      in = h;
    }
    shapes.push_back({in, spec.classes});
    shapes.push_back({spec.classes});
  } else {
    const auto d = lenet_dims(spec.image_side);
    shapes = {
        {kConv1Filters, 1, kKernel, kKernel}, {kConv1Filters},
        {kConv2Filters, kConv1Filters, kKernel, kKernel}, {kConv2Filters},
        {d.flat, kDense1}, {kDense1},
        {kDense1, kDense2}, {kDense2},
        {kDense2, spec.classes}, {spec.classes},
    };
  }
  return shapes;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

void ModelParams::validate() const {
  const auto shapes = param_shapes(spec);
  if (shapes.size() != params.size()) throw InvalidSpec("parameter count does not match spec");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].shape() != shapes[i]) {
      throw InvalidSpec("parameter " + std::to_string(i) + " has shape " +
                        shape_str(params[i].shape()) + ", expected " + shape_str(shapes[i]));
    }
    require_finite(params[i], "model parameters");
  }
}

ModelParams init_params(const ArchSpec& spec, std::uint64_t seed) {
  const auto shapes = param_shapes(spec);
  Rng rng(seed);
  ModelParams model;
  model.spec = spec;
  for (const auto& shape : shapes) {
    if (shape.size() == 1) {
      model.params.push_back(Tensor::zeros(shape));
      continue;
    }
    std::size_t fan_in, fan_out;
    if (shape.size() == 4) {
      const std::size_t field = shape[2] * shape[3];
      fan_in = shape[1] * field;
      fan_out = shape[0] * field;
    } else {
      fan_in = shape[0];
      fan_out = shape[1];
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(shape_numel(shape));
    for (auto& v : w) v = rng.uniform(-limit, limit);
    model.params.emplace_back(shape, std::move(w));
  }
  return model;
}

BoundModel bind_params(ad::Graph& graph, const ModelParams& model, bool trainable) {
  BoundModel bound{model.spec, {}};
  for (const auto& p : model.params) {
    bound.params.push_back(trainable ? graph.leaf(p) : graph.constant(p));
  }
  return bound;
}

ad::Var forward_logits(const BoundModel& model, ad::Var batch) {
  const auto& s = batch.shape();
  if (s.size() != 2 || s[1] != model.spec.input_dim) {
    throw ShapeError("forward_logits: batch " + shape_str(s) + " does not match input dim " +
                     std::to_string(model.spec.input_dim));
  }
  const auto& p = model.params;
  if (model.spec.arch == Arch::kMlp) {
    ad::Var h = batch;
    const std::size_t layers = p.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
      h = ad::bias_add(ad::matmul(h, p[2 * l]), p[2 * l + 1]);
      if (l + 1 < layers) h = ad::relu(h);
    }
    return h;
  }
  const std::size_t side = model.spec.image_side;
  ad::Var h = ad::reshape(batch, {s[0], 1, side, side});
  h = ad::avgpool2d(ad::relu(ad::bias_add(ad::conv2d(h, p[0]), p[1])));
  h = ad::avgpool2d(ad::relu(ad::bias_add(ad::conv2d(h, p[2]), p[3])));
  h = ad::flatten(h);
  h = ad::relu(ad::bias_add(ad::matmul(h, p[4]), p[5]));
  h = ad::relu(ad::bias_add(ad::matmul(h, p[6]), p[7]));
  return ad::bias_add(ad::matmul(h, p[8]), p[9]);
}

Tensor forward_logits(const ModelParams& model, const Tensor& batch) {
  if (batch.rank() != 2) throw ShapeError("forward_logits: batch must be [B, D]");
  const std::size_t rows = batch.dim(0);
  if (rows <= kEvalChunk) {
    ad::Graph g;
    auto bound = bind_params(g, model, false);
    return forward_logits(bound, g.constant(batch)).value();
  }
  std::vector<double> out;
  out.reserve(rows * model.classes());
  for (std::size_t begin = 0; begin < rows; begin += kEvalChunk) {
    const std::size_t end = std::min(rows, begin + kEvalChunk);
    ad::Graph g;
    auto bound = bind_params(g, model, false);
    auto chunk = ad::slice0(g.constant(batch), begin, end);
    const auto logits = forward_logits(bound, chunk).value();
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return Tensor({rows, model.classes()}, std::move(out));
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows: expected [B, C]");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (scores[i * cols + j] > scores[i * cols + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

std::vector<std::size_t> predict(const ModelParams& model, const Tensor& batch) {
  return argmax_rows(forward_logits(model, batch));
}

ad::Var jacobian_exact(const BoundModel& model, ad::Var x) {
  if (x.shape().size() != 2 || x.shape()[0] != 1) {
    throw ShapeError("jacobian_exact: expected a single input [1, D]");
  }
  auto rows = ad::jacobian_rows(forward_logits(model, x), x);
  return ad::concat0(rows);
}

Tensor jacobian_exact(const ModelParams& model, const Tensor& x) {
  ad::Graph g;
  auto bound = bind_params(g, model, false);
  auto xv = g.leaf(x.reshaped({1, x.size()}));
  return jacobian_exact(bound, xv).value();
}

ad::Var jacobian_frob_sq_sum(ad::Var logits, ad::Var x) {
  auto rows = ad::jacobian_rows(logits, x);
  ad::Var total = ad::frob_sq(rows.front());
  for (std::size_t p = 1; p < rows.size(); ++p) total = ad::add(total, ad::frob_sq(rows[p]));
  return total;
}

double mean_jacobian_frob_sq(const ModelParams& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.input_dim()) {
    throw ShapeError("mean_jacobian_frob_sq: x must be [N, D]");
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t rows = x.dim(0);
  double total = 0.0;
  for (std::size_t begin = 0; begin < rows; begin += kChunk) {
    const std::size_t end = std::min(rows, begin + kChunk);
    ad::Graph g;
    auto bound = bind_params(g, model, false);
    auto xs = g.leaf(ad::slice0(g.constant(x), begin, end).value());
    total += jacobian_frob_sq_sum(forward_logits(bound, xs), xs).value().item();
  }
  return total / static_cast<double>(rows);
}

Tensor random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<double> v(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        v[i * dim + j] = rng.normal();
        norm += v[i * dim + j] * v[i * dim + j];
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j) v[i * dim + j] /= norm;
  }
  return Tensor({rows, dim}, std::move(v));
}

ad::Var jacobian_frob_sq_projected(ad::Var logits, ad::Var x,
                                   std::span<const Tensor> projections) {
  if (projections.empty()) throw std::invalid_argument("at least one projection required");
  const std::size_t classes = logits.shape()[1];
  ad::Graph& g = logits.graph();
  const ad::Var wrt[] = {x};
  ad::Var total;
  for (const auto& v : projections) {
    if (v.shape() != logits.shape()) throw ShapeError("projection shape differs from logits");
    auto vj = ad::grad(ad::sum(ad::mul(logits, g.constant(v))), wrt).front();
    auto term = ad::frob_sq(vj);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, static_cast<double>(classes) / static_cast<double>(projections.size()));
}

ad::Var jacobian_frob_sq_projected(ad::Var logits, ad::Var x, std::size_t n_proj, Rng& rng) {
  if (n_proj == 0) throw std::invalid_argument("n_proj must be at least 1");
  std::vector<Tensor> projections;
  for (std::size_t k = 0; k < n_proj; ++k) {
    projections.push_back(random_unit_rows(logits.shape()[0], logits.shape()[1], rng));
  }
  return jacobian_frob_sq_projected(logits, x, projections);
}

ad::Var frob_sq_estimate(const BoundModel& model, ad::Var x, std::size_t n_proj,
                         std::uint64_t seed) {
  Rng rng(seed);
  return jacobian_frob_sq_projected(forward_logits(model, x), x, n_proj, rng);
}

ad::GradCheckReport check_gradients(const ModelParams& model, const ModelLossFn& loss,
                                    const ad::GradCheckOptions& options) {
  ad::LossFn wrapped = [&](ad::Graph&, std::span<const ad::Var> params) {
    BoundModel bound{model.spec, std::vector<ad::Var>(params.begin(), params.end())};
    return loss(bound);
  };
  return ad::check_gradients(model.params, wrapped, options);
}

}  // namespace jens
