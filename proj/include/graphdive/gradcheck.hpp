#pragma once

#include <functional>
#include <string>
#include <vector>

#include "graphdive/mat.hpp"
#include "graphdive/params.hpp"

namespace graphdive {

// Evaluates a scalar loss at the current parameter values. When `with_grad`
// is set it must also leave d(loss)/d(param) in every parameter's grad
// (accumulated onto zeroed gradients).
using LossFn = std::function<double(ParamStore&, bool with_grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Central differences with step h against backward(). Parameter values are
// restored on return.
GradCheckResult grad_check(const LossFn& loss, ParamStore& params, double h = 1e-5);

// Same comparison against caller-supplied gradients (one matrix per parameter).
GradCheckResult compare_gradients(const LossFn& loss, ParamStore& params,
                                  const std::vector<Mat>& analytic, double h = 1e-5);

}  // namespace graphdive
