#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace jens::kernels {
namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void need_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  same_shape(a, b, op);
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return Tensor(a.shape(), std::move(out));
}

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 dims4(const Tensor& t, const char* op) {
  need_rank(t, 4, op);
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return s * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  need_rank(a, 2, "matmul");
  need_rank(b, 2, "matmul");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " and " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  }
  std::vector<double> c(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data();
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = A + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = B + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        C[i * n + j] = acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = A + p * m;
      const double* brow = B + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[p * m + i] * B[j * k + p];
        C[i * n + j] = acc;
      }
    }
  }
  return Tensor({m, n}, std::move(c));
}

Tensor bias_add(const Tensor& a, const Tensor& bias) {
  if (a.rank() < 2 || bias.rank() != 1 || bias.dim(0) != a.dim(1)) {
    throw ShapeError("bias_add: bias " + shape_str(bias.shape()) + " does not fit " +
                     shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0), c = a.dim(1), inner = a.size() / (n * c);
  std::vector<double> out = a.to_vector();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.data() + (i * c + ch) * inner;
      for (std::size_t r = 0; r < inner; ++r) p[r] += bias[ch];
    }
  return Tensor(a.shape(), std::move(out));
}

Tensor channel_sum(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("channel_sum: rank < 2");
  const std::size_t n = a.dim(0), c = a.dim(1), inner = a.size() / (n * c);
  std::vector<double> out(c, 0.0);
  auto d = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = d.data() + (i * c + ch) * inner;
      double acc = 0.0;
      for (std::size_t r = 0; r < inner; ++r) acc += p[r];
      out[ch] += acc;
    }
  return Tensor({c}, std::move(out));
}

Tensor channel_broadcast(const Tensor& v, const Shape& shape) {
  if (v.rank() != 1 || shape.size() < 2 || shape[1] != v.dim(0)) {
    throw ShapeError("channel_broadcast: " + shape_str(v.shape()) + " to " + shape_str(shape));
  }
  const std::size_t total = shape_numel(shape);
  const std::size_t n = shape[0], c = shape[1], inner = total / (n * c);
  std::vector<double> out(total);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * inner), inner, v[ch]);
  return Tensor(shape, std::move(out));
}

Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor relu_mask(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return map(a, [](double x) { return x * x; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::scalar(acc);
}

Tensor mean(const Tensor& a) {
  return Tensor::scalar(sum(a).item() / static_cast<double>(a.size()));
}

Tensor fill(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) throw ShapeError("fill: source must be scalar");
  return Tensor::full(shape, s[0]);
}

Tensor log_softmax(const Tensor& a) {
  need_rank(a, 2, "log_softmax");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.size());
  auto d = a.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = d.data() + i * cols;
    const double mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[j] - lse;
  }
  return Tensor(a.shape(), std::move(out));
}

Tensor exp(const Tensor& a) {
  return map(a, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return map(a, [](double x) { return std::log(x); });
}

Tensor reciprocal(const Tensor& a) {
  return map(a, [](double x) { return 1.0 / x; });
}

Tensor gather_row(const Tensor& a, const std::vector<std::size_t>& idx) {
  need_rank(a, 2, "gather_row");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (idx.size() != rows) throw ShapeError("gather_row: index count differs from rows");
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (idx[i] >= cols) throw ShapeError("gather_row: index out of range");
    out[i] = a[i * cols + idx[i]];
  }
  return Tensor({rows}, std::move(out));
}

Tensor scatter_row(const Tensor& g, const std::vector<std::size_t>& idx, std::size_t cols) {
  need_rank(g, 1, "scatter_row");
  const std::size_t rows = g.dim(0);
  if (idx.size() != rows) throw ShapeError("scatter_row: index count differs from rows");
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (idx[i] >= cols) throw ShapeError("scatter_row: index out of range");
    out[i * cols + idx[i]] = g[i];
  }
  return Tensor({rows, cols}, std::move(out));
}

Tensor reshape(const Tensor& a, const Shape& shape) { return a.reshaped(shape); }

Tensor conv2d(const Tensor& x, const Tensor& k) {
  const auto xd = dims4(x, "conv2d");
  const auto kd = dims4(k, "conv2d");
  if (kd.c != xd.c || kd.h > xd.h || kd.w > xd.w) {
    throw ShapeError("conv2d: kernel " + shape_str(k.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t ho = xd.h - kd.h + 1, wo = xd.w - kd.w + 1;
  std::vector<double> out(xd.n * kd.n * ho * wo, 0.0);
  const double* X = x.data().data();
  const double* K = k.data().data();
  for (std::size_t n = 0; n < xd.n; ++n)
    for (std::size_t o = 0; o < kd.n; ++o) {
      double* Y = out.data() + (n * kd.n + o) * ho * wo;
      for (std::size_t c = 0; c < xd.c; ++c) {
        const double* Xc = X + (n * xd.c + c) * xd.h * xd.w;
        for (std::size_t i = 0; i < kd.h; ++i)
          for (std::size_t j = 0; j < kd.w; ++j) {
            const double kv = K[((o * kd.c + c) * kd.h + i) * kd.w + j];
            for (std::size_t y = 0; y < ho; ++y) {
              const double* xr = Xc + (y + i) * xd.w + j;
              double* yr = Y + y * wo;
              for (std::size_t xx = 0; xx < wo; ++xx) yr[xx] += kv * xr[xx];
            }
          }
      }
    }
  return Tensor({xd.n, kd.n, ho, wo}, std::move(out));
}

Tensor conv2d_input_grad(const Tensor& g, const Tensor& k, std::size_t h, std::size_t w) {
  const auto gd = dims4(g, "conv2d_input_grad");
  const auto kd = dims4(k, "conv2d_input_grad");
  if (gd.c != kd.n || h < kd.h || w < kd.w || gd.h != h - kd.h + 1 || gd.w != w - kd.w + 1) {
    throw ShapeError("conv2d_input_grad: incompatible shapes " + shape_str(g.shape()) + ", " +
                     shape_str(k.shape()));
  }
  std::vector<double> out(gd.n * kd.c * h * w, 0.0);
  const double* G = g.data().data();
  const double* K = k.data().data();
  for (std::size_t n = 0; n < gd.n; ++n)
    for (std::size_t o = 0; o < kd.n; ++o) {
      const double* Go = G + (n * gd.c + o) * gd.h * gd.w;
      for (std::size_t c = 0; c < kd.c; ++c) {
        double* Z = out.data() + (n * kd.c + c) * h * w;
        for (std::size_t i = 0; i < kd.h; ++i)
          for (std::size_t j = 0; j < kd.w; ++j) {
            const double kv = K[((o * kd.c + c) * kd.h + i) * kd.w + j];
            for (std::size_t y = 0; y < gd.h; ++y) {
              const double* gr = Go + y * gd.w;
              double* zr = Z + (y + i) * w + j;
              for (std::size_t xx = 0; xx < gd.w; ++xx) zr[xx] += kv * gr[xx];
            }
          }
      }
    }
  return Tensor({gd.n, kd.c, h, w}, std::move(out));
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& g, std::size_t kh, std::size_t kw) {
  const auto xd = dims4(x, "conv2d_kernel_grad");
  const auto gd = dims4(g, "conv2d_kernel_grad");
  if (xd.n != gd.n || kh > xd.h || kw > xd.w || gd.h != xd.h - kh + 1 ||
      gd.w != xd.w - kw + 1) {
    throw ShapeError("conv2d_kernel_grad: incompatible shapes " + shape_str(x.shape()) + ", " +
                     shape_str(g.shape()));
  }
  std::vector<double> out(gd.c * xd.c * kh * kw, 0.0);
  const double* X = x.data().data();
  const double* G = g.data().data();
  for (std::size_t o = 0; o < gd.c; ++o)
    for (std::size_t c = 0; c < xd.c; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          double acc = 0.0;
          for (std::size_t n = 0; n < xd.n; ++n) {
            const double* Xc = X + (n * xd.c + c) * xd.h * xd.w;
            const double* Go = G + (n * gd.c + o) * gd.h * gd.w;
            for (std::size_t y = 0; y < gd.h; ++y) {
              const double* xr = Xc + (y + i) * xd.w + j;
              const double* gr = Go + y * gd.w;
              for (std::size_t xx = 0; xx < gd.w; ++xx) acc += xr[xx] * gr[xx];
            }
          }
          out[((o * xd.c + c) * kh + i) * kw + j] = acc;
        }
  return Tensor({gd.c, xd.c, kh, kw}, std::move(out));
}

Tensor avgpool2d(const Tensor& x) {
  const auto d = dims4(x, "avgpool2d");
  if (d.h % 2 || d.w % 2) throw ShapeError("avgpool2d: spatial extents must be even");
  const std::size_t ho = d.h / 2, wo = d.w / 2;
  std::vector<double> out(d.n * d.c * ho * wo);
  const double* X = x.data().data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* in = X + p * d.h * d.w;
    double* o = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const double* r0 = in + 2 * y * d.w + 2 * xx;
        const double* r1 = r0 + d.w;
        o[y * wo + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return Tensor({d.n, d.c, ho, wo}, std::move(out));
}

Tensor avgpool2d_grad(const Tensor& g) {
  const auto d = dims4(g, "avgpool2d_grad");
  const std::size_t h = d.h * 2, w = d.w * 2;
  std::vector<double> out(d.n * d.c * h * w);
  const double* G = g.data().data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* in = G + p * d.h * d.w;
    double* o = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) o[y * w + xx] = 0.25 * in[(y / 2) * d.w + xx / 2];
  }
  return Tensor({d.n, d.c, h, w}, std::move(out));
}

Tensor row_sum(const Tensor& a) {
  need_rank(a, 2, "row_sum");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += a[i * cols + j];
  return Tensor({rows}, std::move(out));
}

Tensor row_broadcast(const Tensor& v, std::size_t cols) {
  need_rank(v, 1, "row_broadcast");
  const std::size_t rows = v.dim(0);
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * cols), cols, v[i]);
  return Tensor({rows, cols}, std::move(out));
}

Tensor slice0(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin >= end || end > a.dim(0)) {
    throw ShapeError("slice0: bad range for " + shape_str(a.shape()));
  }
  const std::size_t inner = a.size() / a.dim(0);
  auto d = a.data();
  Shape shape = a.shape();
  shape[0] = end - begin;
  return Tensor(shape, std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                                           d.begin() + static_cast<std::ptrdiff_t>(end * inner)));
}

Tensor pad0(const Tensor& a, std::size_t begin, std::size_t total) {
  if (a.rank() == 0 || begin + a.dim(0) > total) {
    throw ShapeError("pad0: bad range for " + shape_str(a.shape()));
  }
  const std::size_t inner = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = total;
  std::vector<double> out(total * inner, 0.0);
  std::copy(a.data().begin(), a.data().end(),
            out.begin() + static_cast<std::ptrdiff_t>(begin * inner));
  return Tensor(shape, std::move(out));
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat0: scalar input");
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("concat0: trailing extents differ");
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor(shape, std::move(out));
}

}  // namespace jens::kernels
