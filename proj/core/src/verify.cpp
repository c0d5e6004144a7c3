#include "bilevel/verify.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "bilevel/error.hpp"
#include "bilevel/finite_diff.hpp"

namespace bilevel {

ParamVector fd_hypergradient(const BilevelObjective& problem, Paradigm paradigm,
                             const InnerConfig& inner, const ParamVector& x,
                             const RngStream& y0_rng, const TaskDataset& task, double eps,
                             double init_sd) {
  inner.validate();
  const ScalarFunction h = [&](const ParamVector& xp) {
    RngStream rng = y0_rng;
    const ParamVector y0 = init_task_params(paradigm, problem, xp, rng, init_sd);
    const InnerTrajectory traj = run_inner(inner, problem, xp, y0, task, false);
    return problem.value(xp, traj.final_iterate(), task, Split::kVal);
  };
  return fd_gradient(h, x, eps, StepScaling::kRelative);
}

ParamVector analytic_quadratic_hypergrad(const QuadraticSpec& spec, const ParamVector& x) {
  const auto feat = x.segment("feat");
  if (feat.size() != spec.cols) {
    throw Error(ErrorCode::kLayoutMismatch, "analytic_quadratic_hypergrad: feat length");
  }
  const std::size_t rows = spec.b.size();
  const double c = 1.0 + spec.lam;
  std::vector<double> r(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double ax = 0.0;
    for (std::size_t j = 0; j < spec.cols; ++j) ax += spec.a[i * spec.cols + j] * feat[j];
    r[i] = ax / c - spec.b[i];
  }
  ParamVector g = ParamVector::zeros_like(x);
  auto out = g.segment("feat");
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < spec.cols; ++j) out[j] += spec.a[i * spec.cols + j] * r[i] / c;
  }
  return g;
}

namespace {

class ZeroCurvatureProblem final : public BilevelObjective {
 public:
  ZeroCurvatureProblem(std::vector<double> w, std::vector<double> b)
      : w_(std::move(w)), b_(std::move(b)), y_layout_({{"y", b_.size()}}) {}

  std::string name() const override { return "zero_curvature"; }
  const Layout& y_layout() const override { return y_layout_; }
  const Layout& meta_layout() const override { return meta_layout_; }
  bool exact_hvp() const override { return true; }

  double value(const ParamVector&, const ParamVector& y, const TaskDataset&,
               Split split) const override {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      acc += split == Split::kTrain ? w_[i] * y[i] : 0.5 * (y[i] - b_[i]) * (y[i] - b_[i]);
    }
    return acc;
  }
  ParamVector grad_y(const ParamVector&, const ParamVector& y, const TaskDataset&,
                     Split split) const override {
    ParamVector g = ParamVector::zeros_like(y);
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = split == Split::kTrain ? w_[i] : y[i] - b_[i];
    return g;
  }
  ParamVector grad_x(const ParamVector& x, const ParamVector&, const TaskDataset&,
                     Split) const override {
    return ParamVector::zeros_like(x);
  }
  ParamVector hvp_yy(const ParamVector&, const ParamVector&, const TaskDataset&, Split split,
                     const ParamVector& v) const override {
    return split == Split::kTrain ? ParamVector::zeros_like(v) : v;
  }
  ParamVector cross_hvp(const ParamVector& x, const ParamVector&, const TaskDataset&, Split,
                        const ParamVector&) const override {
    return ParamVector::zeros_like(x);
  }

 private:
  std::vector<double> w_;
  std::vector<double> b_;
  Layout y_layout_;
  Layout meta_layout_;
};

CheckRecord make_record(std::string estimator, std::string problem, std::string rule,
                        std::string metric, double value, double threshold) {
  // NaN never passes.
  const bool pass = value <= threshold;
  return {std::move(estimator), std::move(problem), std::move(rule), std::move(metric), value,
          threshold, pass};
}

ParamVector random_like(const ParamVector& p, RngStream& rng, double sd) {
  ParamVector out = ParamVector::zeros_like(p);
  for (double& v : out.values()) v = rng.normal(0.0, sd);
  return out;
}

double scaled_diff(const ParamVector& est, const ParamVector& ref) {
  return max_abs_diff(est, ref) / std::max(1.0, norm_inf(ref));
}

ParamVector directional_fd(const std::function<ParamVector(const ParamVector&)>& phi,
                           const ParamVector& point, const ParamVector& dir) {
  const double eps = 1e-5 * (1.0 + norm_inf(point)) / std::max(norm_inf(dir), 1e-12);
  ParamVector plus = point;
  plus.axpy(eps, dir);
  ParamVector minus = point;
  minus.axpy(-eps, dir);
  ParamVector d = phi(plus) - phi(minus);
  d *= 1.0 / (2.0 * eps);
  return d;
}

constexpr std::size_t kJvpTrials = 10;

// max over trials of |<A^T v, w> - <v, J w>| / max(1, |<v, J w>|), for the
// y-Jacobian (in_x = false) or the x-Jacobian of one step.
double step_jvp_error(const InnerConfig& cfg, const BilevelObjective& problem,
                      const ParamVector& x, const TaskDataset& task, RngStream& rng, bool in_x) {
  double worst = 0.0;
  for (std::size_t trial = 0; trial < kJvpTrials; ++trial) {
    const ParamVector y = random_like(ParamVector(problem.y_layout()), rng, 0.5);
    const ParamVector v = random_like(y, rng, 1.0);
    const StepVjp vjp = step_transposed_jvps(cfg, problem, x, y, task, v);
    double lhs = 0.0;
    double rhs = 0.0;
    if (in_x) {
      const ParamVector w = random_like(x, rng, 1.0);
      const auto phi = [&](const ParamVector& xp) { return inner_step(cfg, problem, xp, y, task); };
      lhs = dot(vjp.b_t_v, w);
      rhs = dot(v, directional_fd(phi, x, w));
    } else {
      const ParamVector w = random_like(y, rng, 1.0);
      const auto phi = [&](const ParamVector& yp) { return inner_step(cfg, problem, x, yp, task); };
      lhs = dot(vjp.a_t_v, w);
      rhs = dot(v, directional_fd(phi, y, w));
    }
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  return worst;
}

ParamVector random_meta_point(const GradcheckCase& c, const InnerConfig& cfg, RngStream& rng) {
  ParamVector x = init_meta_params(*c.problem, c.paradigm, cfg, rng, 0.3);
  for (double& v : x.values()) v += rng.normal(0.0, 0.2);
  return x;
}

std::string rule_name(InnerRule rule) { return std::string(to_string(rule)); }

QuadraticSpec check_quadratic_spec() {
  QuadraticSpec spec;
  spec.a = {1.0, 0.5, -0.3, 0.8, 0.2, -1.1};
  spec.cols = 2;
  spec.lam = 0.5;
  spec.b = {0.7, -0.4, 1.2};
  return spec;
}

}  // namespace

ProblemPtr make_zero_curvature_problem(std::vector<double> w, std::vector<double> b) {
  if (w.size() != b.size() || b.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "zero-curvature problem: w and b must match");
  }
  return std::make_shared<ZeroCurvatureProblem>(std::move(w), std::move(b));
}

nlohmann::json to_json(const CheckRecord& r) {
  return {{"estimator", r.estimator}, {"problem", r.problem}, {"rule", r.rule},
          {"metric", r.metric},       {"value", r.value},     {"threshold", r.threshold},
          {"pass", r.pass}};
}

TaskDataset make_check_task(std::size_t dim, std::size_t way, std::size_t shot, std::size_t query,
                            std::uint64_t seed) {
  SyntheticGaussianConfig cfg;
  cfg.num_classes = way + 2;
  cfg.dim = dim;
  cfg.cluster_spread = 1.5;
  cfg.noise_sd = 0.7;
  cfg.seed = seed;
  EpisodeSpec episode{way, shot, query, 1};
  return sample_task_batch(make_synthetic_classes(cfg), episode, RngStream(seed, 1)).tasks.front();
}

std::vector<GradcheckCase> default_gradcheck_cases(GradcheckProfile profile) {
  const std::vector<InnerRule> all_rules{InnerRule::kGD, InnerRule::kMetaSGD, InnerRule::kBDA,
                                         InnerRule::kMTNetMask, InnerRule::kWarpGradDiag};
  const TaskDataset task = make_check_task(4, 3, 2, 3, 11);
  std::vector<GradcheckCase> cases;
  if (profile != GradcheckProfile::kFd) {
    cases.push_back({"quadratic", make_quadratic(check_quadratic_spec()), Paradigm::kMetaFeature,
                     {InnerRule::kGD, InnerRule::kBDA}, InnerConfig{8, 0.3}, task, 1});
    cases.push_back({"softmax_feature",
                     make_meta_feature_softmax(4, 3, 3, Regularizer::l2(0.01)),
                     Paradigm::kMetaFeature, {InnerRule::kGD, InnerRule::kBDA},
                     InnerConfig{4, 0.5}, task, 2});
    cases.push_back({"softmax_init", make_meta_feature_softmax(4, 3, 3, Regularizer::l2(0.01)),
                     Paradigm::kMetaInit, all_rules, InnerConfig{3, 0.5}, task, 3});
  }
  if (profile != GradcheckProfile::kExact) {
    cases.push_back({"mlp_init",
                     make_meta_init_mlp(4, 4, 3, LossKind::kCrossEntropy, Regularizer::none()),
                     Paradigm::kMetaInit, all_rules, InnerConfig{3, 0.3}, task, 4});
    cases.push_back({"mlp_linear_mse",
                     make_meta_init_mlp(4, 0, 3, LossKind::kMeanSquaredError, Regularizer::l2(0.05)),
                     Paradigm::kMetaInit, {InnerRule::kGD, InnerRule::kMetaSGD},
                     InnerConfig{3, 0.2}, task, 5});
  }
  return cases;
}

std::vector<NamedEstimator> default_estimators() {
  std::vector<NamedEstimator> out;
  out.push_back({"reverse",
                 [](const BilevelObjective& p, Paradigm par, const InnerTrajectory& traj,
                    const ParamVector& x, const TaskDataset& task) {
                   return hypergrad_reverse(p, par, traj, x, task).grad_x;
                 },
                 NamedEstimator::Reference::kFdOracle, 0.0});
  out.push_back({"truncated_full",
                 [](const BilevelObjective& p, Paradigm par, const InnerTrajectory& traj,
                    const ParamVector& x, const TaskDataset& task) {
                   return hypergrad_truncated(p, par, traj, x, task, traj.steps()).grad_x;
                 },
                 NamedEstimator::Reference::kReverse, 1e-12});
  return out;
}

std::vector<CheckRecord> run_gradcheck_suite(const std::vector<GradcheckCase>& cases,
                                             const std::vector<NamedEstimator>& estimators,
                                             const ToleranceProfile& tolerances) {
  std::vector<CheckRecord> records;
  for (const GradcheckCase& c : cases) {
    const double tol = c.problem->exact_hvp() ? tolerances.exact : tolerances.fd;
    for (std::size_t r = 0; r < c.rules.size(); ++r) {
      InnerConfig cfg = c.inner;
      cfg.rule = c.rules[r];
      const std::string rule = rule_name(cfg.rule);
      RngStream rng = RngStream(c.seed, 0).derive(r);
      const ParamVector x = random_meta_point(c, cfg, rng);

      records.push_back(make_record("step", c.name, rule, "jvp_y_rel_error",
                                    step_jvp_error(cfg, *c.problem, x, c.task, rng, false), tol));
      records.push_back(make_record("step", c.name, rule, "jvp_x_rel_error",
                                    step_jvp_error(cfg, *c.problem, x, c.task, rng, true), tol));

      const RngStream y0_rng = rng.derive(100);
      RngStream y0_draw = y0_rng;
      const ParamVector y0 = init_task_params(c.paradigm, *c.problem, x, y0_draw, kDefaultInitSd);
      const InnerTrajectory traj = run_inner(cfg, *c.problem, x, y0, c.task, true);

      std::optional<ParamVector> oracle;
      std::optional<ParamVector> reverse;
      for (const NamedEstimator& est : estimators) {
        const ParamVector g = est.estimate(*c.problem, c.paradigm, traj, x, c.task);
        if (est.reference == NamedEstimator::Reference::kFdOracle) {
          if (!oracle) {
            oracle = fd_hypergradient(*c.problem, c.paradigm, cfg, x, y0_rng, c.task);
          }
          records.push_back(make_record(est.name, c.name, rule, "rel_error_vs_fd",
                                        relative_error(g, *oracle, 1e-8), tol));
        } else {
          if (!reverse) reverse = hypergrad_reverse(*c.problem, c.paradigm, traj, x, c.task).grad_x;
          records.push_back(make_record(est.name, c.name, rule, "max_diff_vs_reverse",
                                        scaled_diff(g, *reverse), est.threshold));
        }
      }
    }
  }
  return records;
}

std::vector<CheckRecord> run_structural_checks(GradcheckProfile profile) {
  std::vector<CheckRecord> records;
  if (profile == GradcheckProfile::kFd) return records;

  const TaskDataset task = make_check_task(4, 3, 2, 3, 21);
  const QuadraticSpec qspec = check_quadratic_spec();
  const ProblemPtr quad = make_quadratic(qspec);
  const ProblemPtr softmax = make_meta_feature_softmax(4, 3, 3, Regularizer::l2(0.01));
  const std::string gd = rule_name(InnerRule::kGD);

  ParamVector xq(quad->meta_layout());
  xq[0] = 0.8;
  xq[1] = -1.3;
  const ParamVector yq0 = ParamVector(quad->y_layout(), 0.25);
  const double s_quad = 0.5 / (1.0 + qspec.lam);

  {
    // ||y_t - y*|| is non-increasing for s <= 1 / (1 + lam).
    InnerConfig cfg{60, 1.0 / (1.0 + qspec.lam)};
    ParamVector y_star = ParamVector::zeros_like(yq0);
    for (std::size_t i = 0; i < qspec.b.size(); ++i) {
      for (std::size_t j = 0; j < qspec.cols; ++j) y_star[i] += qspec.a[i * qspec.cols + j] * xq[j];
      y_star[i] /= 1.0 + qspec.lam;
    }
    for (double s : {0.25 * cfg.step_size, cfg.step_size}) {
      cfg.step_size = s;
      const InnerTrajectory traj = run_inner(cfg, *quad, xq, yq0, task, true);
      double worst = 0.0;
      for (std::size_t t = 0; t < cfg.steps; ++t) {
        worst = std::max(worst, norm(traj.at(t + 1) - y_star) - norm(traj.at(t) - y_star));
      }
      records.push_back(make_record("inner", "quadratic", gd, "distance_increase", worst, 1e-12));
    }
  }

  {
    InnerConfig cfg{200, s_quad};
    const ParamVector analytic = analytic_quadratic_hypergrad(qspec, xq);
    const InnerTrajectory traj = run_inner(cfg, *quad, xq, yq0, task, true);
    const ParamVector rev = hypergrad_reverse(*quad, Paradigm::kMetaFeature, traj, xq, task).grad_x;
    records.push_back(make_record("reverse", "quadratic", gd, "rel_error_vs_analytic",
                                  relative_error(rev, analytic), 1e-3));
    const ParamVector imp = hypergrad_implicit(*quad, Paradigm::kMetaFeature, xq,
                                               traj.final_iterate(), task, ImplicitMethod{})
                                .grad_x;
    records.push_back(make_record("implicit", "quadratic", gd, "rel_error_vs_analytic",
                                  relative_error(imp, analytic), 1e-6));
    const ParamVector fd = fd_hypergradient(*quad, Paradigm::kMetaFeature, cfg, xq,
                                            RngStream(0, 0), task);
    records.push_back(make_record("fd_oracle", "quadratic", gd, "rel_error_vs_analytic",
                                  relative_error(fd, analytic), 1e-5));
  }

  RngStream rng(31, 0);
  InnerConfig soft_cfg{4, 0.5};
  ParamVector xs = init_meta_params(*softmax, Paradigm::kMetaFeature, soft_cfg, rng, 0.3);
  const ParamVector ys0 = random_like(ParamVector(softmax->y_layout()), rng, 0.3);

  {
    // Richardson: halving the oracle step shrinks its truncation error 4x.
    InnerConfig cfg{2, 0.5};
    const RngStream y0_rng(32, 0);
    std::vector<ParamVector> g;
    for (double eps : {4e-2, 2e-2, 1e-2}) {
      g.push_back(fd_hypergradient(*softmax, Paradigm::kMetaFeature, cfg, xs, y0_rng, task, eps));
    }
    const double ratio = norm(g[0] - g[1]) / norm(g[1] - g[2]);
    records.push_back(make_record("fd_oracle", "softmax_feature", gd, "richardson_ratio_minus_4",
                                  std::abs(ratio - 4.0), 1.0));
  }

  {
    const InnerTrajectory gd_traj = run_inner(soft_cfg, *softmax, xs, ys0, task, true);
    InnerConfig bda = soft_cfg;
    bda.rule = InnerRule::kBDA;
    bda.bda_alpha = 1.0;
    const InnerTrajectory bda_traj = run_inner(bda, *softmax, xs, ys0, task, true);
    double diff = 0.0;
    for (std::size_t t = 0; t <= soft_cfg.steps; ++t) {
      diff = std::max(diff, max_abs_diff(gd_traj.at(t), bda_traj.at(t)));
    }
    records.push_back(make_record("inner", "softmax_feature", rule_name(InnerRule::kBDA),
                                  "alpha1_max_diff_vs_gd", diff, 0.0));
  }

  {
    // Rule parameters at their neutral values reproduce plain GD under MetaInit.
    InnerConfig base{4, 0.5};
    RngStream init_rng(33, 0);
    ParamVector x_gd = init_meta_params(*softmax, Paradigm::kMetaInit, base, init_rng, 0.3);
    RngStream y_rng(34, 0);
    const ParamVector y0 = init_task_params(Paradigm::kMetaInit, *softmax, x_gd, y_rng);
    const InnerTrajectory gd_traj = run_inner(base, *softmax, x_gd, y0, task, true);

    const auto compare = [&](InnerRule rule, const std::string& segment, double fill,
                             const std::string& metric) {
      InnerConfig cfg = base;
      cfg.rule = rule;
      const Layout layout = build_meta_layout(*softmax, Paradigm::kMetaInit, rule);
      ParamVector x(layout);
      for (const Segment& s : x_gd.layout().segments()) {
        const auto src = x_gd.segment(s.name);
        std::copy(src.begin(), src.end(), x.segment(s.name).begin());
      }
      for (double& v : x.segment(segment)) v = fill;
      const InnerTrajectory traj = run_inner(cfg, *softmax, x, y0, task, true);
      double diff = 0.0;
      for (std::size_t t = 0; t <= base.steps; ++t) {
        diff = std::max(diff, max_abs_diff(gd_traj.at(t), traj.at(t)));
      }
      records.push_back(make_record("inner", "softmax_init", rule_name(rule), metric, diff, 1e-12));
    };
    compare(InnerRule::kWarpGradDiag, "warp_logdiag", 0.0, "zero_warp_max_diff_vs_gd");
    compare(InnerRule::kMTNetMask, "mask_logits", 40.0, "saturated_mask_max_diff_vs_gd");
    compare(InnerRule::kMetaSGD, "rates", softplus_inverse(base.step_size),
            "constant_rates_max_diff_vs_gd");
  }

  {
    // Without LL curvature the first-order estimate is exact.
    const ProblemPtr flat = make_zero_curvature_problem({1.0, -0.5, 0.25}, {0.3, 0.1, -0.2});
    InnerConfig cfg{5, 0.2};
    RngStream init_rng(35, 0);
    const ParamVector x = init_meta_params(*flat, Paradigm::kMetaInit, cfg, init_rng, 0.5);
    RngStream y_rng(36, 0);
    const ParamVector y0 = init_task_params(Paradigm::kMetaInit, *flat, x, y_rng);
    const InnerTrajectory traj = run_inner(cfg, *flat, x, y0, task, true);
    const ParamVector rev = hypergrad_reverse(*flat, Paradigm::kMetaInit, traj, x, task).grad_x;
    const ParamVector fo =
        hypergrad_first_order(*flat, Paradigm::kMetaInit, x, traj.final_iterate(), task).grad_x;
    records.push_back(make_record("first_order", "zero_curvature", gd, "rel_error_vs_reverse",
                                  relative_error(fo, rev), 1e-10));
  }

  {
    // One unrolled step: the central difference is exact on a quadratic.
    InnerConfig cfg{1, s_quad};
    const InnerTrajectory traj = run_inner(cfg, *quad, xq, yq0, task, true);
    const ParamVector rev = hypergrad_reverse(*quad, Paradigm::kMetaFeature, traj, xq, task).grad_x;
    const ParamVector darts =
        hypergrad_darts(*quad, Paradigm::kMetaFeature, traj, xq, task, 1e-2).grad_x;
    records.push_back(make_record("darts", "quadratic", gd, "rel_error_vs_one_step_reverse",
                                  relative_error(darts, rev), 1e-8));
  }

  {
    // On a non-quadratic loss the gap shrinks ~4x per halving of delta.
    InnerConfig cfg{1, 0.5};
    const InnerTrajectory traj = run_inner(cfg, *softmax, xs, ys0, task, true);
    const ParamVector rev =
        hypergrad_reverse(*softmax, Paradigm::kMetaFeature, traj, xs, task).grad_x;
    std::vector<double> gaps;
    for (double delta : {0.4, 0.2, 0.1, 0.05}) {
      gaps.push_back(
          norm(hypergrad_darts(*softmax, Paradigm::kMetaFeature, traj, xs, task, delta).grad_x - rev));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < gaps.size(); ++i) {
      worst = std::max(worst, std::abs(gaps[i] / gaps[i + 1] - 4.0));
    }
    records.push_back(make_record("darts", "softmax_feature", gd, "halving_ratio_minus_4", worst,
                                  1.0));
  }
  return records;
}

std::vector<CheckRecord> run_gradcheck_suite(GradcheckProfile profile) {
  std::vector<CheckRecord> records =
      run_gradcheck_suite(default_gradcheck_cases(profile), default_estimators());
  std::vector<CheckRecord> structural = run_structural_checks(profile);
  records.insert(records.end(), std::make_move_iterator(structural.begin()),
                 std::make_move_iterator(structural.end()));
  return records;
}

}  // namespace bilevel
