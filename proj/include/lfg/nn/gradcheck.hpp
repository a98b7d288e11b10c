#pragma once

#include <functional>
#include <span>
#include <string>

namespace lfg::nn {

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Central differences of `loss` w.r.t. each entry of `values` (perturbed in
// place and restored) against `analytic`. Relative error per entry is
// |a - n| / max(|a| + |n|, floor).
GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> values,
                           std::span<const double> analytic, double h = 1e-3,
                           double floor = 1e-6);

}  // namespace lfg::nn
