#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "asymloc/gradcheck.hpp"
#include "asymloc/graph.hpp"
#include "asymloc/rng.hpp"
#include "asymloc/tensor.hpp"

namespace testutil {

using asymloc::Graph;
using asymloc::Tensor;
using asymloc::Var;

inline Tensor<double> random_tensor(asymloc::Rng& rng, std::vector<int> dims, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_tensor_f(asymloc::Rng& rng, std::vector<int> dims, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(dims));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Rows of unit length.
inline Tensor<double> unit_rows(asymloc::Rng& rng, int n, int d) {
  Tensor<double> t({n, d});
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < d; ++j) s += (t.at(i, j) = rng.normal()) * t.at(i, j);
    for (int j = 0; j < d; ++j) t.at(i, j) /= std::sqrt(s);
  }
  return t;
}

/// Builds f(inputs) as a scalar graph node; inputs enter as parameters.
using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Max relative error between reverse mode and central differences over
/// every entry of every input.
inline double grad_error(const Builder& build, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.parameter(t));
  const Var loss = build(g, vars);
  const auto grads = g.backward(loss);
  std::vector<double> flat, analytic;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (double v : inputs[k].data()) flat.push_back(v);
    for (double v : grads.at(vars[k].id).data()) analytic.push_back(v);
  }
  auto fn = [&](std::span<const double> p) {
    Graph<double> g2;
    std::vector<Var> vs;
    std::size_t off = 0;
    for (const auto& t : inputs) {
      Tensor<double> c = t;
      for (double& v : c.data()) v = p[off++];
      vs.push_back(g2.parameter(c));
    }
    return g2.value(build(g2, vs))[0];
  };
  return asymloc::finite_difference_check(fn, flat, analytic, h).max_rel_error;
}

}  // namespace testutil
