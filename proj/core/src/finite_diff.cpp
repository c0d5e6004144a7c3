#include "bilevel/finite_diff.hpp"

#include <cmath>

#include "bilevel/error.hpp"

namespace bilevel {

ParamVector fd_gradient(const ScalarFunction& h, const ParamVector& p, double eps,
                        StepScaling scaling) {
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "fd_gradient: eps must be > 0");
  ParamVector grad = ParamVector::zeros_like(p);
  ParamVector probe = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double step = scaling == StepScaling::kRelative ? eps * (1.0 + std::abs(p[k])) : eps;
    probe[k] = p[k] + step;
    const double plus = h(probe);
    probe[k] = p[k] - step;
    const double minus = h(probe);
    probe[k] = p[k];
    require_finite(plus, "fd_gradient: h(p + eps e_k)");
    require_finite(minus, "fd_gradient: h(p - eps e_k)");
    grad[k] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

double default_hvp_eps(const ParamVector& p, const ParamVector& v) {
  return 1e-4 * (1.0 + norm_inf(p)) / (1.0 + norm_inf(v));
}

ParamVector fd_hvp(const VectorFunction& g, const ParamVector& p, const ParamVector& v,
                   std::optional<double> eps) {
  require_same_layout(p, v, "fd_hvp");
  const double step = eps.value_or(default_hvp_eps(p, v));
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "fd_hvp: eps must be > 0");

  ParamVector probe = p;
  probe.axpy(step, v);
  ParamVector out = g(probe);
  probe.axpy(-2.0 * step, v);
  const ParamVector minus = g(probe);
  require_same_layout(out, minus, "fd_hvp: gradient oracle");
  out -= minus;
  out *= 1.0 / (2.0 * step);
  require_finite(out, "fd_hvp");
  return out;
}

}  // namespace bilevel
