#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lcl/autograd/tensor.hpp"

namespace lcl {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t elements_checked = 0;
};

using ScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar function with central
/// differences, element by element. Relative error uses the denominator
/// max(|analytic|, |numeric|, floor).
inline GradCheckResult finite_difference_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                                               double eps = 1e-5, double floor = 1e-8) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) in = Tensor<double>::parameter(in.value());
    in.zero_grad();
  }
  Tensor<double> out = f(inputs);
  if (out.numel() != 1) throw ShapeError("finite_difference_check: function must return a scalar");
  backward(out);

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const NDArray<double> analytic = inputs[k].grad();
    NDArray<double>& x = inputs[k].mutable_value();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      x[i] = orig + eps;
      const double fp = f(inputs).item();
      x[i] = orig - eps;
      const double fm = f(inputs).item();
      x[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_difference_check: non-finite value at input " + std::to_string(k) + " element " +
                           std::to_string(i));
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++res.elements_checked;
      if (rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst_input = k;
        res.worst_element = i;
        res.analytic_at_worst = a;
        res.numeric_at_worst = numeric;
      }
    }
  }
  return res;
}

}  // namespace lcl
