#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cosnet/tensor.hpp"

namespace cosnet {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Compares the tape gradient of f against central differences
// (f(x+eps) - f(x-eps)) / (2 eps), one coordinate at a time, over every input
// with requires_grad set. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as denominator. Inputs are restored bitwise after each probe.
inline GradCheckReport grad_check(const std::string& name, const ScalarFn& f, std::vector<Tensor> inputs,
                                  double eps = 1e-5, double tol = 1e-6) {
  if (!(eps > 0.0)) throw UsageError("grad_check: eps must be positive");
  for (auto& t : inputs) {
    if (t.requires_grad()) t.zero_grad();
  }
  const Tensor loss = f(inputs);
  if (loss.size() != 1) throw DimensionError("grad_check: function must return a scalar, got " + shape_str(loss.shape()));
  loss.backward();

  GradCheckReport report{name, 0.0, tol, false, 0};
  NoGradGuard no_grad;
  auto eval = [&]() {
    try {
      return f(inputs).item();
    } catch (const NumericError& e) {
      throw NumericError("grad_check(" + name + "): evaluation failed at perturbed point: " + e.what());
    }
  };
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = eval();
      values[i] = saved - eps;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::fabs(analytic[i] - numeric) / denom);
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace cosnet
