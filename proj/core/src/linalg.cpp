#include "bilevel/linalg.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bilevel/error.hpp"

namespace bilevel {

namespace {

ParamVector checked_apply(const LinearMap& apply, const ParamVector& v) {
  ParamVector out = apply(v);
  require_same_layout(out, v, "conjugate_gradient: operator output");
  return out;
}

double checked_dot(const ParamVector& a, const ParamVector& b) {
  const double d = dot(a, b);
  require_finite(d, "conjugate_gradient: inner product");
  return d;
}

}  // namespace

CgResult conjugate_gradient(const LinearMap& apply, const ParamVector& b, double tol,
                            std::size_t max_iter) {
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "conjugate_gradient: tol must be > 0");
  if (max_iter < 1) {
    throw Error(ErrorCode::kInvalidArgument, "conjugate_gradient: max_iter must be >= 1");
  }

  const double threshold = tol * std::max(1.0, norm(b));
  CgResult result{ParamVector::zeros_like(b), 0, 0.0, false};
  ParamVector& q = result.solution;

  ParamVector r = b;
  ParamVector p = r;
  double rr = checked_dot(r, r);

  // Normalized residuals so far. Each new residual is re-orthogonalized
  // against them; without this, rounding delays termination past dim steps.
  std::vector<ParamVector> basis;
  const auto remember = [&basis](const ParamVector& v, double vv) {
    if (vv > 0.0) basis.push_back((1.0 / std::sqrt(vv)) * v);
  };
  remember(r, rr);

  while (result.iterations < max_iter) {
    if (std::sqrt(rr) <= threshold) {
      // Confirm against the true residual before accepting.
      ParamVector true_r = b - checked_apply(apply, q);
      const double true_rr = checked_dot(true_r, true_r);
      if (std::sqrt(true_rr) <= threshold) break;
      r = std::move(true_r);
      p = r;
      rr = true_rr;
      basis.clear();
      remember(r, rr);
    }
    const ParamVector ap = checked_apply(apply, p);
    const double curvature = checked_dot(p, ap);
    if (curvature <= 0.0) {
      throw Error(ErrorCode::kIndefiniteCurvature,
                  "conjugate_gradient: <p, Ap> = " + std::to_string(curvature) +
                      " at iteration " + std::to_string(result.iterations));
    }
    const double step = rr / curvature;
    q.axpy(step, p);
    r.axpy(-step, ap);
    ++result.iterations;
    for (const ParamVector& u : basis) r.axpy(-dot(u, r), u);

    const double rr_next = checked_dot(r, r);
    if (rr_next > 10.0 * rr) {
      // Recurrence has drifted; restart from the true residual.
      r = b - checked_apply(apply, q);
      p = r;
      rr = checked_dot(r, r);
      basis.clear();
      remember(r, rr);
      continue;
    }
    remember(r, rr_next);
    p *= rr_next / rr;
    p += r;
    rr = rr_next;
  }

  result.residual = norm(b - checked_apply(apply, q));
  result.converged = result.residual <= threshold;
  return result;
}

}  // namespace bilevel
