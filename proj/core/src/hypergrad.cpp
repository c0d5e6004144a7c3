#include "bilevel/hypergrad.hpp"

#include <algorithm>
#include <cmath>

#include "bilevel/error.hpp"
#include "bilevel/linalg.hpp"

namespace bilevel {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

HyperGradResult finish(HyperGradResult result, const BilevelObjective& problem,
                       const ParamVector& x, const ParamVector& y_final, const TaskDataset& task,
                       std::string_view context) {
  result.diagnostics.ul_value = problem.value(x, y_final, task, Split::kVal);
  require_finite(result.grad_x, context);
  require_finite(result.diagnostics.ul_value, context);
  return result;
}

// Runs the reverse recurrence over steps T..T-k+1 and returns the gradient
// together with the adjoint that reached y_{T-k}.
std::pair<ParamVector, ParamVector> reverse_sweep(const BilevelObjective& problem,
                                                  const InnerTrajectory& traj,
                                                  const ParamVector& x, const TaskDataset& task,
                                                  std::size_t k) {
  const std::size_t steps = traj.steps();
  const ParamVector& y_final = traj.final_iterate();
  ParamVector adjoint = problem.grad_y(x, y_final, task, Split::kVal);
  ParamVector grad = problem.grad_x(x, y_final, task, Split::kVal);
  for (std::size_t t = steps; t > steps - k; --t) {
    StepVjp vjp = step_transposed_jvps(traj.config, problem, x, traj.iterates[t - 1], task, adjoint);
    grad += vjp.b_t_v;
    adjoint = std::move(vjp.a_t_v);
  }
  return {std::move(grad), std::move(adjoint)};
}

void add_to_init(ParamVector& grad, const ParamVector& y_adjoint) {
  auto init = grad.segment("init");
  for (std::size_t i = 0; i < init.size(); ++i) init[i] += y_adjoint[i];
}

}  // namespace

std::string describe(const HyperGradMethod& method) {
  return std::visit(
      Overloaded{
          [](const ReverseMethod&) -> std::string { return "Reverse"; },
          [](const TruncatedReverseMethod& m) -> std::string {
            return m.k == 0 ? "TruncatedReverse(K=ceil(T/2))"
                            : "TruncatedReverse(K=" + std::to_string(m.k) + ")";
          },
          [](const ImplicitMethod&) -> std::string { return "Implicit"; },
          [](const FirstOrderMethod&) -> std::string { return "FirstOrder"; },
          [](const DartsMethod&) -> std::string { return "Darts"; },
      },
      method);
}

HyperGradResult hypergrad_reverse(const BilevelObjective& problem, Paradigm paradigm,
                                  const InnerTrajectory& traj, const ParamVector& x,
                                  const TaskDataset& task) {
  if (!traj.complete()) {
    throw Error(ErrorCode::kTrajectoryNotRecorded,
                "reverse hypergradient needs every inner iterate recorded");
  }
  auto [grad, adjoint] = reverse_sweep(problem, traj, x, task, traj.steps());
  if (paradigm == Paradigm::kMetaInit) add_to_init(grad, adjoint);
  return finish({std::move(grad), {}}, problem, x, traj.final_iterate(), task, "hypergrad_reverse");
}

HyperGradResult hypergrad_truncated(const BilevelObjective& problem, Paradigm paradigm,
                                    const InnerTrajectory& traj, const ParamVector& x,
                                    const TaskDataset& task, std::size_t k) {
  const std::size_t steps = traj.steps();
  if (k < 1 || k > steps) {
    throw Error(ErrorCode::kInvalidArgument, "truncation K=" + std::to_string(k) +
                                                 " must satisfy 1 <= K <= T=" + std::to_string(steps));
  }
  if (!traj.complete()) {
    throw Error(ErrorCode::kInsufficientIterates, "truncated reverse over " + std::to_string(k) +
                                                      " steps needs the last " +
                                                      std::to_string(k + 1) + " iterates");
  }
  auto [grad, adjoint] = reverse_sweep(problem, traj, x, task, k);
  if (paradigm == Paradigm::kMetaInit && k == steps) add_to_init(grad, adjoint);
  HyperGradResult result{std::move(grad), {}};
  result.diagnostics.truncation_k = k;
  return finish(std::move(result), problem, x, traj.final_iterate(), task, "hypergrad_truncated");
}

HyperGradResult hypergrad_implicit(const BilevelObjective& problem, Paradigm paradigm,
                                   const ParamVector& x, const ParamVector& y_final,
                                   const TaskDataset& task, const ImplicitMethod& cfg) {
  if (!(cfg.prox_lambda >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "implicit: prox_lambda must be >= 0");
  }
  if (paradigm == Paradigm::kMetaInit && !(cfg.prox_lambda > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "implicit: MetaInit needs prox_lambda > 0 (the init gradient is otherwise zero)");
  }
  problem.check_layouts(x, y_final, "hypergrad_implicit");
  const double prox = cfg.prox_lambda;
  const LinearMap hessian = [&](const ParamVector& v) {
    ParamVector hv = problem.hvp_yy(x, y_final, task, Split::kTrain, v);
    if (prox > 0.0) hv.axpy(prox, v);
    return hv;
  };
  const ParamVector rhs = problem.grad_y(x, y_final, task, Split::kVal);
  const CgResult cg = conjugate_gradient(hessian, rhs, cfg.cg_tol, cfg.cg_max_iter);

  ParamVector grad = problem.grad_x(x, y_final, task, Split::kVal);
  grad -= problem.cross_hvp(x, y_final, task, Split::kTrain, cg.solution);
  if (paradigm == Paradigm::kMetaInit) {
    // d/dinit <prox (y - init), q> = -prox q, subtracted.
    auto init = grad.segment("init");
    for (std::size_t i = 0; i < init.size(); ++i) init[i] += prox * cg.solution[i];
  }

  HyperGradResult result{std::move(grad), {}};
  result.diagnostics.cg_iters = cg.iterations;
  result.diagnostics.cg_residual = cg.residual;
  result.diagnostics.cg_converged = cg.converged;
  return finish(std::move(result), problem, x, y_final, task, "hypergrad_implicit");
}

HyperGradResult hypergrad_first_order(const BilevelObjective& problem, Paradigm paradigm,
                                      const ParamVector& x, const ParamVector& y_final,
                                      const TaskDataset& task) {
  problem.check_layouts(x, y_final, "hypergrad_first_order");
  ParamVector grad = problem.grad_x(x, y_final, task, Split::kVal);
  if (paradigm == Paradigm::kMetaInit) {
    add_to_init(grad, problem.grad_y(x, y_final, task, Split::kVal));
  }
  return finish({std::move(grad), {}}, problem, x, y_final, task, "hypergrad_first_order");
}

HyperGradResult hypergrad_darts(const BilevelObjective& problem, Paradigm paradigm,
                                const InnerTrajectory& traj, const ParamVector& x,
                                const TaskDataset& task, double delta) {
  if (!(delta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "darts: delta must be > 0");
  if (traj.config.rule != InnerRule::kGD) {
    throw Error(ErrorCode::kInvalidArgument, "darts approximation is defined for the GD rule only");
  }
  const ParamVector& y_final = traj.final_iterate();
  problem.check_layouts(x, y_final, "hypergrad_darts");
  if (traj.steps() == 0) return hypergrad_first_order(problem, paradigm, x, y_final, task);
  if (!traj.complete()) {
    throw Error(ErrorCode::kInsufficientIterates, "darts needs the iterate before y_T");
  }

  const ParamVector& base = traj.iterates[traj.steps() - 1];
  const ParamVector v = problem.grad_y(x, y_final, task, Split::kVal);
  const double eps = delta / std::max(norm(v), 1e-12);
  const double scale = traj.config.step_size / (2.0 * eps);

  ParamVector plus = base;
  plus.axpy(eps, v);
  ParamVector minus = base;
  minus.axpy(-eps, v);

  ParamVector grad = problem.grad_x(x, y_final, task, Split::kVal);
  grad.axpy(-scale, problem.grad_x(x, plus, task, Split::kTrain) -
                        problem.grad_x(x, minus, task, Split::kTrain));
  if (paradigm == Paradigm::kMetaInit) {
    ParamVector init_term = v;
    init_term.axpy(-scale, problem.grad_y(x, plus, task, Split::kTrain) -
                               problem.grad_y(x, minus, task, Split::kTrain));
    add_to_init(grad, init_term);
  }
  return finish({std::move(grad), {}}, problem, x, y_final, task, "hypergrad_darts");
}

bool needs_full_trajectory(const HyperGradMethod& method) {
  return std::holds_alternative<ReverseMethod>(method) ||
         std::holds_alternative<TruncatedReverseMethod>(method) ||
         std::holds_alternative<DartsMethod>(method);
}

HyperGradResult compute_hypergradient(const HyperGradMethod& method,
                                      const BilevelObjective& problem, Paradigm paradigm,
                                      const InnerTrajectory& traj, const ParamVector& x,
                                      const TaskDataset& task) {
  return std::visit(
      Overloaded{
          [&](const ReverseMethod&) { return hypergrad_reverse(problem, paradigm, traj, x, task); },
          [&](const TruncatedReverseMethod& m) {
            const std::size_t steps = traj.steps();
            if (steps == 0) return hypergrad_reverse(problem, paradigm, traj, x, task);
            const std::size_t k = m.k == 0 ? (steps + 1) / 2 : std::min(m.k, steps);
            return hypergrad_truncated(problem, paradigm, traj, x, task, k);
          },
          [&](const ImplicitMethod& m) {
            return hypergrad_implicit(problem, paradigm, x, traj.final_iterate(), task, m);
          },
          [&](const FirstOrderMethod&) {
            return hypergrad_first_order(problem, paradigm, x, traj.final_iterate(), task);
          },
          [&](const DartsMethod& m) {
            return hypergrad_darts(problem, paradigm, traj, x, task, m.delta);
          },
      },
      method);
}

}  // namespace bilevel
