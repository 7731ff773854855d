#pragma once
#include <functional>
#include <string>

#include "prwm/layers.hpp"

namespace prwm {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Compares reverse-mode gradients of a scalar-valued graph builder against
// central finite differences. `build_loss` must be deterministic and must
// rebuild the graph from the current parameter values on every call.
//
// Relative error per coordinate: |ga - gn| / max(|ga|, |gn|) when the
// denominator is at least 1e-6, else the coordinate counts as exact.
// eps outside [1e-7, 1e-3] is rejected; a non-finite loss is an error.
GradCheckReport grad_check(const std::function<ag::Var()>& build_loss,
                           nn::Params& params, double eps = 1e-5);

}  // namespace prwm
