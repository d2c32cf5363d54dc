#pragma once

// Forward numerical kernels behind the autodiff primitives. Each validates
// its operand shapes and throws ShapeError on mismatch.

#include <vector>

#include "jens/tensor.hpp"

namespace jens::kernels {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);
Tensor bias_add(const Tensor& a, const Tensor& bias);
Tensor channel_sum(const Tensor& a);
Tensor channel_broadcast(const Tensor& v, const Shape& shape);
Tensor relu(const Tensor& a);
Tensor relu_mask(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor fill(const Tensor& s, const Shape& shape);
Tensor log_softmax(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor gather_row(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor scatter_row(const Tensor& g, const std::vector<std::size_t>& idx, std::size_t cols);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor conv2d(const Tensor& x, const Tensor& k);
Tensor conv2d_input_grad(const Tensor& g, const Tensor& k, std::size_t h, std::size_t w);
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& g, std::size_t kh, std::size_t kw);
Tensor avgpool2d(const Tensor& x);
Tensor avgpool2d_grad(const Tensor& g);
Tensor row_sum(const Tensor& a);
Tensor row_broadcast(const Tensor& v, std::size_t cols);
Tensor slice0(const Tensor& a, std::size_t begin, std::size_t end);
Tensor pad0(const Tensor& a, std::size_t begin, std::size_t total);
Tensor concat0(const std::vector<Tensor>& parts);

}  // namespace jens::kernels
