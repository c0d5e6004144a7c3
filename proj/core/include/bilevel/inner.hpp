#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "bilevel/objectives.hpp"
#include "bilevel/param_vector.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

// Lower-level step rules. Each update is y - D(x) * G(x, y) with a diagonal
// scaling D and a descent direction G:
//   kGD           D = s,                               G = grad_y f
//   kMetaSGD      D = softplus(x["rates"]),            G = grad_y f
//   kBDA          D = s,                               G = a grad_y f + (1 - a) grad_y F
//   kMTNetMask    D = s sigmoid(x["mask_logits"][seg]), G = grad_y f
//   kWarpGradDiag D = s exp(x["warp_logdiag"]),        G = grad_y f
enum class InnerRule { kGD, kMetaSGD, kBDA, kMTNetMask, kWarpGradDiag };

std::string_view to_string(InnerRule rule);
std::string_view to_string(Paradigm paradigm);

struct InnerConfig {
  std::size_t steps = 5;
  double step_size = 0.1;
  InnerRule rule = InnerRule::kGD;
  double bda_alpha = 0.5;

  void validate() const;
};

struct InnerTrajectory {
  // y_0..y_T when recorded, otherwise {y_0, y_T} (or {y_0} for T = 0).
  std::vector<ParamVector> iterates;
  InnerConfig config;

  std::size_t steps() const noexcept { return config.steps; }
  bool complete() const noexcept { return iterates.size() == config.steps + 1; }
  const ParamVector& initial() const { return iterates.front(); }
  const ParamVector& final_iterate() const { return iterates.back(); }
  // y_t; requires a complete trajectory.
  const ParamVector& at(std::size_t t) const;
};

inline constexpr double kDefaultInitSd = 0.01;

double softplus(double v);
double softplus_inverse(double v);
double sigmoid(double v);

// x layout for a problem under a paradigm and rule: the problem's own
// segments, then "init" (MetaInit), then whatever the rule reads.
Layout build_meta_layout(const BilevelObjective& problem, Paradigm paradigm, InnerRule rule);

// Initial values for a fresh x: problem segments via init_meta, "init" from
// N(0, init_sd^2), "rates" at softplus_inverse(step_size), logits at 0.
ParamVector init_meta_params(const BilevelObjective& problem, Paradigm paradigm,
                             const InnerConfig& config, RngStream& rng,
                             double init_sd = kDefaultInitSd);

// y_0: a copy of x["init"] under MetaInit, N(0, init_sd^2) draws otherwise.
ParamVector init_task_params(Paradigm paradigm, const BilevelObjective& problem,
                             const ParamVector& x, RngStream& rng,
                             double init_sd = kDefaultInitSd);

ParamVector inner_step(const InnerConfig& config, const BilevelObjective& problem,
                       const ParamVector& x, const ParamVector& y_prev, const TaskDataset& task);

InnerTrajectory run_inner(const InnerConfig& config, const BilevelObjective& problem,
                          const ParamVector& x, const ParamVector& y0, const TaskDataset& task,
                          bool record);

struct StepVjp {
  ParamVector a_t_v;  // (d step / d y_prev)^T v, layout of y
  ParamVector b_t_v;  // (d step / d x)^T v, layout of x
};

StepVjp step_transposed_jvps(const InnerConfig& config, const BilevelObjective& problem,
                             const ParamVector& x, const ParamVector& y_prev,
                             const TaskDataset& task, const ParamVector& v);

}  // namespace bilevel
