#pragma once

#include <cstddef>
#include <functional>

#include "bilevel/param_vector.hpp"

namespace bilevel {

using LinearMap = std::function<ParamVector(const ParamVector&)>;

struct CgResult {
  ParamVector solution;
  std::size_t iterations = 0;
  // ||apply(solution) - b||, recomputed from the returned solution.
  double residual = 0.0;
  bool converged = false;
};

// Matrix-free conjugate gradient for a symmetric positive definite `apply`.
// Stops once ||r|| <= tol * max(1, ||b||); otherwise returns the iterate at
// max_iter with converged = false. Throws IndefiniteCurvature when a search
// direction has <p, Ap> <= 0 and NonFiniteValue on NaN/Inf inner products.
CgResult conjugate_gradient(const LinearMap& apply, const ParamVector& b, double tol,
                            std::size_t max_iter);

}  // namespace bilevel
