#include "graphdive/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graphdive {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult compare_gradients(const LossFn& loss, ParamStore& params,
                                  const std::vector<Mat>& analytic, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
  if (analytic.size() != params.size())
    throw std::invalid_argument("grad_check: analytic gradient count mismatch");
  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double orig = p.value.data[j];
      p.value.data[j] = orig + h;
      const double up = loss(params, false);
      p.value.data[j] = orig - h;
      const double down = loss(params, false);
      p.value.data[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].data[j];
      const double err = relative_error(a, numeric);
      ++r.coordinates;
      if (err > r.max_rel_error || r.coordinates == 1) {
        r.max_rel_error = err;
        r.worst_param = p.name;
        r.worst_index = j;
        r.analytic = a;
        r.numeric = numeric;
      }
    }
  }
  return r;
}

GradCheckResult grad_check(const LossFn& loss, ParamStore& params, double h) {
  params.zero_grad();
  loss(params, true);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad);
  return compare_gradients(loss, params, analytic, h);
}

}  // namespace graphdive
