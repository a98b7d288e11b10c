#include "lfg/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lfg/error.hpp"

namespace lfg::nn {

GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> values,
                           std::span<const double> analytic, double h, double floor) {
  if (values.size() != analytic.size()) throw_data("grad_check: size mismatch");
  GradCheckReport report;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double rel = abs_err / std::max(std::abs(numeric) + std::abs(analytic[i]), floor);
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    ++report.checked;
  }
  return report;
}

}  // namespace lfg::nn
