#include "bilevel/inner.hpp"

#include <cmath>
#include <string>

#include "bilevel/error.hpp"

namespace bilevel {

std::string_view to_string(InnerRule rule) {
  switch (rule) {
    case InnerRule::kGD: return "GD";
    case InnerRule::kMetaSGD: return "MetaSGD";
    case InnerRule::kBDA: return "BDA";
    case InnerRule::kMTNetMask: return "MTNetMask";
    case InnerRule::kWarpGradDiag: return "WarpGradDiag";
  }
  return "?";
}

std::string_view to_string(Paradigm paradigm) {
  return paradigm == Paradigm::kMetaInit ? "MetaInit" : "MetaFeature";
}

void InnerConfig::validate() const {
  if (!(step_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "inner step_size must be > 0");
  if (!(bda_alpha >= 0.0 && bda_alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "inner bda_alpha must lie in [0, 1]");
  }
}

const ParamVector& InnerTrajectory::at(std::size_t t) const {
  if (!complete()) {
    throw Error(ErrorCode::kTrajectoryNotRecorded, "trajectory stores only its endpoints");
  }
  return iterates.at(t);
}

double softplus(double v) { return v > 30.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

double softplus_inverse(double v) {
  if (!(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, "softplus_inverse needs a positive value");
  return v > 30.0 ? v + std::log(-std::expm1(-v)) : std::log(std::expm1(v));
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

namespace {

const char* required_segment(InnerRule rule) {
  switch (rule) {
    case InnerRule::kMetaSGD: return "rates";
    case InnerRule::kMTNetMask: return "mask_logits";
    case InnerRule::kWarpGradDiag: return "warp_logdiag";
    default: return nullptr;
  }
}

std::size_t required_length(InnerRule rule, const Layout& y_layout) {
  return rule == InnerRule::kMTNetMask ? y_layout.segments().size() : y_layout.size();
}

std::span<const double> rule_segment(InnerRule rule, const ParamVector& x, const Layout& y_layout) {
  const char* name = required_segment(rule);
  const Segment* s = x.layout().find(name);
  if (s == nullptr) {
    throw Error(ErrorCode::kMissingSegment, std::string(to_string(rule)) + " needs x segment '" +
                                                name + "'");
  }
  if (s->length != required_length(rule, y_layout)) {
    throw Error(ErrorCode::kLayoutMismatch,
                std::string("x segment '") + name + "' has the wrong length for " +
                    std::string(to_string(rule)));
  }
  return x.segment(name);
}

// Per-coordinate scaling D(x) in the layout of y.
ParamVector step_scaling(const InnerConfig& config, const ParamVector& x, const Layout& y_layout) {
  ParamVector d(y_layout, config.step_size);
  switch (config.rule) {
    case InnerRule::kGD:
    case InnerRule::kBDA:
      break;
    case InnerRule::kMetaSGD: {
      const auto rates = rule_segment(config.rule, x, y_layout);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = softplus(rates[i]);
      break;
    }
    case InnerRule::kMTNetMask: {
      const auto logits = rule_segment(config.rule, x, y_layout);
      const auto& segs = y_layout.segments();
      for (std::size_t k = 0; k < segs.size(); ++k) {
        const double m = sigmoid(logits[k]);
        for (std::size_t i = 0; i < segs[k].length; ++i) d[segs[k].offset + i] *= m;
      }
      break;
    }
    case InnerRule::kWarpGradDiag: {
      const auto warp = rule_segment(config.rule, x, y_layout);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= std::exp(warp[i]);
      break;
    }
  }
  return d;
}

// Descent direction G(x, y).
ParamVector step_direction(const InnerConfig& config, const BilevelObjective& problem,
                           const ParamVector& x, const ParamVector& y, const TaskDataset& task) {
  if (config.rule != InnerRule::kBDA || config.bda_alpha == 1.0) {
    return problem.grad_y(x, y, task, Split::kTrain);
  }
  const double alpha = config.bda_alpha;
  ParamVector g = problem.grad_y(x, y, task, Split::kVal);
  g *= 1.0 - alpha;
  if (alpha != 0.0) g.axpy(alpha, problem.grad_y(x, y, task, Split::kTrain));
  return g;
}

// Combination of the train/val oracles matching step_direction.
template <typename Oracle>
ParamVector aggregated(const InnerConfig& config, Oracle&& oracle) {
  if (config.rule != InnerRule::kBDA || config.bda_alpha == 1.0) return oracle(Split::kTrain);
  const double alpha = config.bda_alpha;
  ParamVector out = oracle(Split::kVal);
  out *= 1.0 - alpha;
  if (alpha != 0.0) out.axpy(alpha, oracle(Split::kTrain));
  return out;
}

}  // namespace

Layout build_meta_layout(const BilevelObjective& problem, Paradigm paradigm, InnerRule rule) {
  Layout layout = problem.meta_layout();
  if (paradigm == Paradigm::kMetaInit) layout = layout.appended("init", problem.y_layout().size());
  if (const char* name = required_segment(rule)) {
    layout = layout.appended(name, required_length(rule, problem.y_layout()));
  }
  return layout;
}

ParamVector init_meta_params(const BilevelObjective& problem, Paradigm paradigm,
                             const InnerConfig& config, RngStream& rng, double init_sd) {
  config.validate();
  ParamVector x(build_meta_layout(problem, paradigm, config.rule));
  problem.init_meta(x, rng);
  if (paradigm == Paradigm::kMetaInit) {
    for (double& v : x.segment("init")) v = rng.normal(0.0, init_sd);
  }
  if (config.rule == InnerRule::kMetaSGD) {
    const double r = softplus_inverse(config.step_size);
    for (double& v : x.segment("rates")) v = r;
  }
  return x;
}

ParamVector init_task_params(Paradigm paradigm, const BilevelObjective& problem,
                             const ParamVector& x, RngStream& rng, double init_sd) {
  if (paradigm == Paradigm::kMetaInit) {
    const Segment* s = x.layout().find("init");
    if (s == nullptr) throw Error(ErrorCode::kMissingSegment, "MetaInit needs x segment 'init'");
    if (s->length != problem.y_layout().size()) {
      throw Error(ErrorCode::kLayoutMismatch, "x segment 'init' does not match the layout of y");
    }
    const auto init = x.segment("init");
    return ParamVector(std::make_shared<const Layout>(problem.y_layout()),
                       std::vector<double>(init.begin(), init.end()));
  }
  ParamVector y(problem.y_layout());
  if (init_sd > 0.0) {
    for (double& v : y.values()) v = rng.normal(0.0, init_sd);
  }
  return y;
}

ParamVector inner_step(const InnerConfig& config, const BilevelObjective& problem,
                       const ParamVector& x, const ParamVector& y_prev, const TaskDataset& task) {
  problem.check_layouts(x, y_prev, "inner_step");
  const ParamVector d = step_scaling(config, x, y_prev.layout());
  ParamVector y_next = y_prev;
  y_next -= hadamard(step_direction(config, problem, x, y_prev, task), d);
  require_finite(y_next, "inner_step");
  return y_next;
}

InnerTrajectory run_inner(const InnerConfig& config, const BilevelObjective& problem,
                          const ParamVector& x, const ParamVector& y0, const TaskDataset& task,
                          bool record) {
  config.validate();
  InnerTrajectory traj{{y0}, config};
  if (record) traj.iterates.reserve(config.steps + 1);
  ParamVector y = y0;
  for (std::size_t t = 0; t < config.steps; ++t) {
    y = inner_step(config, problem, x, y, task);
    if (record) traj.iterates.push_back(y);
  }
  if (!record && config.steps > 0) traj.iterates.push_back(std::move(y));
  return traj;
}

StepVjp step_transposed_jvps(const InnerConfig& config, const BilevelObjective& problem,
                             const ParamVector& x, const ParamVector& y_prev,
                             const TaskDataset& task, const ParamVector& v) {
  problem.check_layouts(x, y_prev, "step_transposed_jvps");
  require_same_layout(y_prev, v, "step_transposed_jvps");
  const ParamVector d = step_scaling(config, x, y_prev.layout());
  const ParamVector dv = hadamard(d, v);

  StepVjp out{v, ParamVector()};
  out.a_t_v -= aggregated(config, [&](Split s) { return problem.hvp_yy(x, y_prev, task, s, dv); });
  out.b_t_v = aggregated(config, [&](Split s) { return problem.cross_hvp(x, y_prev, task, s, dv); });
  out.b_t_v *= -1.0;

  if (config.rule == InnerRule::kMetaSGD || config.rule == InnerRule::kMTNetMask ||
      config.rule == InnerRule::kWarpGradDiag) {
    // Chain rule through D(x): -(dD/dx)^T (G * v).
    const ParamVector gv = hadamard(step_direction(config, problem, x, y_prev, task), v);
    const auto params = rule_segment(config.rule, x, y_prev.layout());
    auto target = out.b_t_v.segment(required_segment(config.rule));
    switch (config.rule) {
      case InnerRule::kMetaSGD:
        for (std::size_t i = 0; i < target.size(); ++i) target[i] -= sigmoid(params[i]) * gv[i];
        break;
      case InnerRule::kMTNetMask: {
        const auto& segs = y_prev.layout().segments();
        for (std::size_t k = 0; k < segs.size(); ++k) {
          const double sg = sigmoid(params[k]);
          double acc = 0.0;
          for (std::size_t i = 0; i < segs[k].length; ++i) acc += gv[segs[k].offset + i];
          target[k] -= config.step_size * sg * (1.0 - sg) * acc;
        }
        break;
      }
      case InnerRule::kWarpGradDiag:
        for (std::size_t i = 0; i < target.size(); ++i) {
          target[i] -= config.step_size * std::exp(params[i]) * gv[i];
        }
        break;
      default:
        break;
    }
  }
  require_finite(out.a_t_v, "step_transposed_jvps (y)");
  require_finite(out.b_t_v, "step_transposed_jvps (x)");
  return out;
}

}  // namespace bilevel
