#include "asymloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "asymloc/errors.hpp"

namespace asymloc {

GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                                        std::span<const double> params,
                                        std::span<const double> analytic, double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  if (params.size() != analytic.size())
    throw ShapeError("finite_difference_check: analytic gradient length mismatch");
  GradCheckReport report;
  std::vector<double> p(params.begin(), params.end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = fn(p);
    p[i] = orig - h;
    const double fm = fn(p);
    p[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_rel_error || report.evaluated == 0) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.evaluated;
  }
  return report;
}

}  // namespace asymloc
