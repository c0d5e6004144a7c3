#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bilevel/inner.hpp"
#include "bilevel/objectives.hpp"
#include "bilevel/param_vector.hpp"

namespace bilevel {

struct ReverseMethod {};
// k = 0 means "use ceil(T / 2)".
struct TruncatedReverseMethod {
  std::size_t k = 0;
};
struct ImplicitMethod {
  double cg_tol = 1e-10;
  std::size_t cg_max_iter = 200;
  double prox_lambda = 0.0;
};
struct FirstOrderMethod {};
struct DartsMethod {
  double delta = 1e-2;
};

using HyperGradMethod =
    std::variant<ReverseMethod, TruncatedReverseMethod, ImplicitMethod, FirstOrderMethod, DartsMethod>;

std::string describe(const HyperGradMethod& method);

struct HyperGradDiagnostics {
  std::optional<std::size_t> cg_iters;
  std::optional<double> cg_residual;
  std::optional<bool> cg_converged;
  std::optional<std::size_t> truncation_k;
  double ul_value = 0.0;  // validation loss at y_T
};

struct HyperGradResult {
  ParamVector grad_x;
  HyperGradDiagnostics diagnostics;
};

// Reverse-mode differentiation through the recorded trajectory:
//   lambda_T = grad_y F(y_T); for t = T..1: g += B_t^T lambda_t,
//   lambda_{t-1} = A_t^T lambda_t; g += grad_x F(y_T); MetaInit adds
//   lambda_0 to g["init"].
HyperGradResult hypergrad_reverse(const BilevelObjective& problem, Paradigm paradigm,
                                  const InnerTrajectory& traj, const ParamVector& x,
                                  const TaskDataset& task);

// Same recurrence over the last k steps only; y_{T-k} is treated as constant.
HyperGradResult hypergrad_truncated(const BilevelObjective& problem, Paradigm paradigm,
                                    const InnerTrajectory& traj, const ParamVector& x,
                                    const TaskDataset& task, std::size_t k);

// Implicit-function gradient at y_T: solve (H_yy f + prox I) q = grad_y F by
// CG, then g = grad_x F - cross(q). Under MetaInit the proximal term
// prox/2 ||y - x["init"]||^2 couples y to the init segment, so prox > 0 is
// required there.
HyperGradResult hypergrad_implicit(const BilevelObjective& problem, Paradigm paradigm,
                                   const ParamVector& x, const ParamVector& y_final,
                                   const TaskDataset& task, const ImplicitMethod& cfg);

// All second-order terms dropped.
HyperGradResult hypergrad_first_order(const BilevelObjective& problem, Paradigm paradigm,
                                      const ParamVector& x, const ParamVector& y_final,
                                      const TaskDataset& task);

// One-step hypergradient whose mixed second-order term is a central
// difference of LL gradients around y_{T-1} along v = grad_y F(y_T).
// Only defined for the GD step rule.
HyperGradResult hypergrad_darts(const BilevelObjective& problem, Paradigm paradigm,
                                const InnerTrajectory& traj, const ParamVector& x,
                                const TaskDataset& task, double delta);

HyperGradResult compute_hypergradient(const HyperGradMethod& method,
                                      const BilevelObjective& problem, Paradigm paradigm,
                                      const InnerTrajectory& traj, const ParamVector& x,
                                      const TaskDataset& task);

// Whether `method` needs every inner iterate stored.
bool needs_full_trajectory(const HyperGradMethod& method);

// ---------------------------------------------------------------------------
// Named method table.

struct MethodComposition {
  std::string name;
  Paradigm paradigm;
  InnerRule rule;
  HyperGradMethod method;
  std::string notes;
};

const std::vector<MethodComposition>& named_methods();

// Case-insensitive lookup; throws UnknownMethod listing the valid names.
MethodComposition compose_named_method(std::string_view name);

}  // namespace bilevel
