#pragma once

#include <functional>
#include <optional>

#include "bilevel/param_vector.hpp"

namespace bilevel {

using ScalarFunction = std::function<double(const ParamVector&)>;
using VectorFunction = std::function<ParamVector(const ParamVector&)>;

inline constexpr double kDefaultFdGradientEps = 1e-5;

enum class StepScaling {
  kAbsolute,  // step = eps
  kRelative,  // step = eps * (1 + |p_k|)
};

// Central difference per coordinate, same layout as p.
ParamVector fd_gradient(const ScalarFunction& h, const ParamVector& p,
                        double eps = kDefaultFdGradientEps,
                        StepScaling scaling = StepScaling::kAbsolute);

// (g(p + eps v) - g(p - eps v)) / (2 eps). When eps is omitted it is
// 1e-4 * (1 + ||p||_inf) / (1 + ||v||_inf).
ParamVector fd_hvp(const VectorFunction& g, const ParamVector& p, const ParamVector& v,
                   std::optional<double> eps = std::nullopt);

double default_hvp_eps(const ParamVector& p, const ParamVector& v);

}  // namespace bilevel
