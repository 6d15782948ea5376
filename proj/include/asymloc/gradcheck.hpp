#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace asymloc {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t evaluated = 0;
};

/// Compares an analytic gradient against central differences
/// (f(p+h) - f(p-h)) / 2h, one parameter at a time. Relative error per entry
/// is |a - n| / max(|a|, |n|, 1e-8); the report carries the maximum.
GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                                        std::span<const double> params,
                                        std::span<const double> analytic, double h);

}  // namespace asymloc
