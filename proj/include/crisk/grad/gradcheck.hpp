#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "crisk/grad/layers.hpp"

namespace crisk::grad {

struct GradCheckReport {
  bool passed = true;
  double worst_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  std::string summary() const {
    return std::string(passed ? "pass" : "FAIL") + " (checked " + std::to_string(checked) +
           ", worst " + worst_param + "[" + std::to_string(worst_index) +
           "] rel err " + std::to_string(worst_error) + ", analytic " +
           std::to_string(worst_analytic) + ", numeric " + std::to_string(worst_numeric) + ")";
  }
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Gradients smaller than this are compared on an absolute scale.
  double magnitude_floor = 1e-3;
  /// Runs after the analytic backward pass; used to inject faults in tests.
  std::function<void(ParamGraph&)> tamper;
};

/// Compares every analytic gradient against central finite differences.
/// `loss_fn` must rebuild the graph from the current parameter values and be
/// deterministic.
inline GradCheckReport grad_check(ParamGraph& params, const std::function<Var()>& loss_fn,
                                  const GradCheckOptions& opt = {}) {
  params.zero_grad();
  backward(loss_fn());
  if (opt.tamper) opt.tamper(params);
  GradCheckReport rep;
  for (auto& [name, p] : params.entries()) {
    Tensor analytic = p.grad();
    Tensor& w = p.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double up = loss_fn().item();
      w[i] = orig - opt.step;
      const double down = loss_fn().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.magnitude_floor});
      const double err = std::abs(a - numeric) / denom;
      ++rep.checked;
      if (rep.checked == 1 || !(err <= rep.worst_error)) {
        rep.worst_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        rep.worst_param = name;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  rep.passed = rep.worst_error < opt.tolerance;
  return rep;
}

}  // namespace crisk::grad
