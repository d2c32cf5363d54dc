#include "jens/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jens/rng.hpp"

namespace jens::ad {
namespace {

struct Coord {
  std::size_t tensor;
  std::size_t index;
};

std::vector<Tensor> perturbed(std::span<const Tensor> params, const Coord& c, double delta) {
  std::vector<Tensor> out(params.begin(), params.end());
  auto v = out[c.tensor].to_vector();
  v[c.index] += delta;
  out[c.tensor] = Tensor(out[c.tensor].shape(), std::move(v));
  return out;
}

std::vector<Tensor> shifted(std::span<const Tensor> params, std::span<const Tensor> dir,
                            double delta) {
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto v = params[t].to_vector();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += delta * dir[t][i];
    out.emplace_back(params[t].shape(), std::move(v));
  }
  return out;
}

std::vector<Var> bind(Graph& g, std::span<const Tensor> params) {
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(g.leaf(p));
  return vars;
}

double loss_value(std::span<const Tensor> params, const LossFn& loss) {
  Graph g;
  auto vars = bind(g, params);
  return loss(g, vars).value().item();
}

std::vector<Tensor> gradient(std::span<const Tensor> params, const LossFn& loss) {
  Graph g;
  auto vars = bind(g, params);
  return grad_values(loss(g, vars), vars);
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / (std::max(std::abs(a), std::abs(b)) + floor);
}

}  // namespace

GradCheckReport check_gradients(std::span<const Tensor> params, const LossFn& loss,
                                const GradCheckOptions& options) {
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].size(); ++i) coords.push_back({t, i});
  Rng rng(options.seed);
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    rng.shuffle(std::span<Coord>(coords));
    coords.resize(options.max_coords);
  }

  GradCheckReport report;
  report.coords_checked = coords.size();
  const double h = options.step;

  const auto analytic = gradient(params, loss);
  for (const auto& c : coords) {
    const double up = loss_value(perturbed(params, c, h), loss);
    const double down = loss_value(perturbed(params, c, -h), loss);
    const double fd = (up - down) / (2.0 * h);
    report.first_order_error = std::max(
        report.first_order_error, rel_err(analytic[c.tensor][c.index], fd, options.abs_floor));
  }

  if (options.second_order) {
    std::vector<Tensor> dir;
    for (const auto& p : params) {
      std::vector<double> v(p.size());
      for (auto& x : v) x = rng.normal();
      dir.emplace_back(p.shape(), std::move(v));
    }
    std::vector<Tensor> hv;
    {
      Graph g;
      auto vars = bind(g, params);
      auto first = grad(loss(g, vars), vars);
      Var dot;
      for (std::size_t t = 0; t < vars.size(); ++t) {
        Var term = sum(mul(first[t], g.constant(dir[t])));
        dot = dot.valid() ? add(dot, term) : term;
      }
      hv = grad_values(dot, vars);
    }
    const auto g_up = gradient(shifted(params, dir, h), loss);
    const auto g_down = gradient(shifted(params, dir, -h), loss);
    for (const auto& c : coords) {
      const double fd = (g_up[c.tensor][c.index] - g_down[c.tensor][c.index]) / (2.0 * h);
      report.second_order_error = std::max(
          report.second_order_error, rel_err(hv[c.tensor][c.index], fd, options.abs_floor));
    }
  }
  report.passed = report.max_rel_error() <= options.tol;
  return report;
}

}  // namespace jens::ad
