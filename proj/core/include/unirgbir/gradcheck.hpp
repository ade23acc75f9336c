#pragma once

#include "unirgbir/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace unirgbir {

/// Central-difference gradient verification for 64-bit builds of the
/// differentiable ops. `loss_fn` rebuilds the forward pass from current
/// parameter values; `grad_fn` additionally runs backward and fills
/// param.grad. Relative error per group is
/// |analytic - numeric| / max(|analytic|, |numeric|), skipped when both
/// are below the dead-band.
struct GradCheckReport {
  struct Group {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;
  };
  std::vector<Group> groups;
  double worst = 0.0;

  bool pass(double tol) const { return worst < tol; }
};

inline GradCheckReport grad_check(std::vector<Param<double>*> params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<double()>& grad_fn, double eps = 1e-5,
                                  int64_t max_elems_per_group = 512) {
  for (auto* p : params) p->zero_grad();
  grad_fn();

  GradCheckReport report;
  for (auto* p : params) {
    p->ensure_grad();
    GradCheckReport::Group grp;
    grp.name = p->name;
    const int64_t n = p->value.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_elems_per_group);
    for (int64_t j = 0; j < n; j += stride) {
      const double orig = p->value[j];
      p->value[j] = orig + eps;
      const double fp = loss_fn();
      p->value[j] = orig - eps;
      const double fm = loss_fn();
      p->value[j] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p->grad[j];
      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      if (denom < 1e-9) continue;  // both effectively zero
      grp.max_rel_err = std::max(grp.max_rel_err, std::abs(analytic - numeric) / denom);
      ++grp.checked;
    }
    report.worst = std::max(report.worst, grp.max_rel_err);
    report.groups.push_back(std::move(grp));
  }
  for (auto* p : params) p->zero_grad();
  return report;
}

}  // namespace unirgbir
