#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "jens/autodiff.hpp"

namespace jens::ad {

// Builds a scalar loss on `graph` from parameter leaves bound in order.
using LossFn = std::function<Var(Graph& graph, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  bool second_order = true;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  // Added to the denominator of each relative error so exact zeros compare.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double first_order_error = 0.0;
  // Hessian-vector product along a random direction vs differenced
  // gradients; zero when second-order checking is off.
  double second_order_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;

  double max_rel_error() const {
    return first_order_error > second_order_error ? first_order_error : second_order_error;
  }
};

// Compares autodiff gradients (and, optionally, double-backward
// Hessian-vector products) against central finite differences. Each
// difference is evaluated on a freshly built graph.
GradCheckReport check_gradients(std::span<const Tensor> params, const LossFn& loss,
                                const GradCheckOptions& options = {});

}  // namespace jens::ad
