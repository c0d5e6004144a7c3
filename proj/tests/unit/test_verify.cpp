#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "bilevel/verify.hpp"
#include "test_util.hpp"

namespace bilevel {
namespace {

using testing::random_vector;

TEST(FdOracle, MatchesAnalyticQuadraticAtConvergence) {
  const QuadraticSpec spec = QuadraticSpec::scalar(2.0, 1.0, {1.0});
  const ProblemPtr q = make_quadratic(spec);
  const ParamVector x(q->meta_layout(), 2.0);
  const ParamVector fd =
      fd_hypergradient(*q, Paradigm::kMetaFeature, InnerConfig{200, 0.25}, x, RngStream(0, 0), {});
  EXPECT_NEAR(fd[0], 1.0, 1e-6);
  EXPECT_NEAR(analytic_quadratic_hypergrad(spec, x)[0], 1.0, 1e-15);
}

TEST(AnalyticQuadratic, HandValues) {
  QuadraticSpec spec;
  spec.a = {1.0, 2.0};  // one row, two columns
  spec.cols = 2;
  spec.lam = 3.0;
  spec.b = {0.5};
  ParamVector x(Layout({{"feat", 2}}));
  x[0] = 1.0;
  x[1] = 1.0;
  // y* = 3 / 4, residual 0.25, gradient = A^T 0.25 / 4
  const ParamVector g = analytic_quadratic_hypergrad(spec, x);
  EXPECT_DOUBLE_EQ(g[0], 0.0625);
  EXPECT_DOUBLE_EQ(g[1], 0.125);
  // the minimizer of F makes the gradient vanish
  x[0] = 2.0;
  x[1] = 0.0;
  EXPECT_EQ(norm(analytic_quadratic_hypergrad(spec, x)), 0.0);
}

TEST(FdOracle, ZeroStepsMetaInitIsUpperGradientAtInit) {
  const ProblemPtr p = make_meta_feature_softmax(3, 2, 2, Regularizer::none());
  const TaskDataset task = make_check_task(3, 2, 2, 2, 3);
  RngStream rng(4, 0);
  const InnerConfig cfg{0, 0.5};
  ParamVector x = random_vector(build_meta_layout(*p, Paradigm::kMetaInit, InnerRule::kGD), rng);
  const ParamVector fd = fd_hypergradient(*p, Paradigm::kMetaInit, cfg, x, RngStream(1, 1), task);
  ParamVector y(p->y_layout());
  std::copy_n(x.segment("init").begin(), y.size(), y.values().begin());
  const ParamVector gF = p->grad_y(x, y, task, Split::kVal);
  const ParamVector gx = p->grad_x(x, y, task, Split::kVal);
  const auto fd_init = fd.segment("init");
  for (std::size_t i = 0; i < gF.size(); ++i) EXPECT_NEAR(fd_init[i], gF[i], 1e-8);
  const auto fd_feat = fd.segment("feat");
  const auto gx_feat = gx.segment("feat");
  for (std::size_t i = 0; i < fd_feat.size(); ++i) EXPECT_NEAR(fd_feat[i], gx_feat[i], 1e-8);
}

TEST(FdOracle, NegativeDirectionDescends) {
  const ProblemPtr p = make_meta_init_mlp(3, 4, 2, LossKind::kCrossEntropy, Regularizer::l2(0.01));
  const TaskDataset task = make_check_task(3, 2, 3, 3, 5);
  RngStream rng(6, 0);
  const InnerConfig cfg{3, 0.3};
  const ParamVector x = random_vector(build_meta_layout(*p, Paradigm::kMetaInit, InnerRule::kGD), rng, 0.5);
  const RngStream y0_rng(7, 0);
  const ParamVector g = fd_hypergradient(*p, Paradigm::kMetaInit, cfg, x, y0_rng, task);
  const auto upper = [&](const ParamVector& xp) {
    RngStream r = y0_rng;
    const ParamVector y0 = init_task_params(Paradigm::kMetaInit, *p, xp, r);
    return p->value(xp, run_inner(cfg, *p, xp, y0, task, false).final_iterate(), task, Split::kVal);
  };
  ParamVector stepped = x;
  stepped.axpy(-1e-3 / norm(g), g);
  EXPECT_LT(upper(stepped), upper(x));
}

TEST(ZeroCurvature, Definition) {
  const ProblemPtr p = make_zero_curvature_problem({1.0, -2.0}, {0.5, 0.5});
  ParamVector x(p->meta_layout());
  ParamVector y(p->y_layout());
  y[0] = 1.0;
  y[1] = 1.0;
  EXPECT_DOUBLE_EQ(p->value(x, y, {}, Split::kTrain), -1.0);
  EXPECT_DOUBLE_EQ(p->value(x, y, {}, Split::kVal), 0.25);
  EXPECT_EQ(norm(p->hvp_yy(x, y, {}, Split::kTrain, y)), 0.0);
  EXPECT_EQ(x.size(), 0u);
}

TEST(Gradcheck, EmptyCaseListGivesEmptyReport) {
  EXPECT_TRUE(run_gradcheck_suite({}, default_estimators()).empty());
}

TEST(Gradcheck, ExactProfilePasses) {
  const auto records = run_gradcheck_suite(GradcheckProfile::kExact);
  ASSERT_FALSE(records.empty());
  for (const CheckRecord& r : records) {
    EXPECT_TRUE(r.pass) << r.estimator << " " << r.problem << " " << r.rule << " " << r.metric << " " << r.value;
    EXPECT_EQ(r.pass, r.value <= r.threshold);
  }
  std::set<std::string> problems;
  for (const CheckRecord& r : records) problems.insert(r.problem);
  EXPECT_TRUE(problems.count("quadratic"));
}

TEST(Gradcheck, FdProfilePasses) {
  const auto records = run_gradcheck_suite(GradcheckProfile::kFd);
  ASSERT_FALSE(records.empty());
  for (const CheckRecord& r : records) EXPECT_TRUE(r.pass) << r.problem << " " << r.rule << " " << r.metric;
}

// A sign-flipped estimator must fail every row it owns and nothing else.
TEST(Gradcheck, BrokenEstimatorIsCaught) {
  auto estimators = default_estimators();
  NamedEstimator broken{"negated",
                        [](const BilevelObjective& p, Paradigm par, const InnerTrajectory& t,
                           const ParamVector& x, const TaskDataset& task) {
                          ParamVector g = hypergrad_reverse(p, par, t, x, task).grad_x;
                          g *= -1.0;
                          return g;
                        },
                        NamedEstimator::Reference::kFdOracle};
  estimators.push_back(broken);
  const auto records = run_gradcheck_suite(default_gradcheck_cases(GradcheckProfile::kExact), estimators);
  std::size_t broken_rows = 0;
  for (const CheckRecord& r : records) {
    if (r.estimator == "negated") {
      ++broken_rows;
      EXPECT_FALSE(r.pass) << r.problem << " " << r.rule;
    } else {
      EXPECT_TRUE(r.pass) << r.estimator << " " << r.problem << " " << r.rule << " " << r.metric;
    }
  }
  EXPECT_GT(broken_rows, 0u);
}

TEST(Gradcheck, RecordJson) {
  const CheckRecord r{"reverse", "quadratic", "GD", "rel_error_vs_fd", 1e-9, 1e-4, true};
  const nlohmann::json j = to_json(r);
  EXPECT_EQ(j["estimator"], "reverse");
  EXPECT_EQ(j["pass"], true);
  EXPECT_DOUBLE_EQ(j["threshold"].get<double>(), 1e-4);
}

TEST(CheckTask, DeterministicShape) {
  const TaskDataset a = make_check_task(3, 2, 2, 4, 1);
  const TaskDataset b = make_check_task(3, 2, 2, 4, 1);
  ASSERT_EQ(a.train.size(), 4u);
  ASSERT_EQ(a.val.size(), 8u);
  EXPECT_EQ(a.train[0].features, b.train[0].features);
  EXPECT_EQ(a.way, 2u);
}

}  // namespace
}  // namespace bilevel
