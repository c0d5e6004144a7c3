#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilevel/data.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/inner.hpp"
#include "bilevel/objectives.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

inline constexpr double kDefaultOracleEps = 1e-5;

// Brute-force hypergradient: central differences of
//   h(x) = F(x, run_inner(x, y_0(x)).y_T)
// per coordinate with step eps * (1 + |x_k|), re-running the whole inner loop
// (and the y_0 draw from a copy of `y0_rng`) for every probe.
ParamVector fd_hypergradient(const BilevelObjective& problem, Paradigm paradigm,
                             const InnerConfig& inner, const ParamVector& x,
                             const RngStream& y0_rng, const TaskDataset& task,
                             double eps = kDefaultOracleEps, double init_sd = kDefaultInitSd);

// A^T (A x / (1 + lam) - b) / (1 + lam), in a layout with segment "feat".
ParamVector analytic_quadratic_hypergrad(const QuadraticSpec& spec, const ParamVector& x);

// f = <w, y> (zero curvature), F = 1/2 ||y - b||^2; the loss ignores x and data.
ProblemPtr make_zero_curvature_problem(std::vector<double> w, std::vector<double> b);

struct CheckRecord {
  std::string estimator;
  std::string problem;
  std::string rule;
  std::string metric;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

nlohmann::json to_json(const CheckRecord& record);

struct GradcheckCase {
  std::string name;
  ProblemPtr problem;
  Paradigm paradigm = Paradigm::kMetaFeature;
  std::vector<InnerRule> rules;
  InnerConfig inner;  // rule is replaced by each entry of `rules`
  TaskDataset task;
  std::uint64_t seed = 0;
};

using Estimator = std::function<ParamVector(const BilevelObjective&, Paradigm,
                                            const InnerTrajectory&, const ParamVector&,
                                            const TaskDataset&)>;

struct NamedEstimator {
  enum class Reference {
    kFdOracle,  // relative error against fd_hypergradient, tolerance from the profile
    kReverse,   // max |difference| against hypergrad_reverse
  };

  std::string name;
  Estimator estimate;
  Reference reference = Reference::kFdOracle;
  double threshold = 0.0;  // used with kReverse
};

struct ToleranceProfile {
  double exact = 1e-4;  // problems with analytic second-order oracles
  double fd = 1e-2;     // problems with finite-difference HVPs
};

enum class GradcheckProfile { kExact, kFd, kAll };

std::vector<GradcheckCase> default_gradcheck_cases(GradcheckProfile profile);
std::vector<NamedEstimator> default_estimators();

// For every case x rule: transposed-Jacobian consistency of the step map in
// y and in x, then every estimator against its reference.
std::vector<CheckRecord> run_gradcheck_suite(const std::vector<GradcheckCase>& cases,
                                             const std::vector<NamedEstimator>& estimators,
                                             const ToleranceProfile& tolerances = {});

// Closed-form and structural identities (analytic convergence, TRHG/BDA/
// WarpGrad/MT-net reductions, first-order gap, DARTS order, oracle checks).
std::vector<CheckRecord> run_structural_checks(GradcheckProfile profile);

// Default cases + estimators + structural checks for the profile.
std::vector<CheckRecord> run_gradcheck_suite(GradcheckProfile profile);

// Small deterministic classification episode for checks and benchmarks.
TaskDataset make_check_task(std::size_t dim, std::size_t way, std::size_t shot, std::size_t query,
                            std::uint64_t seed);

}  // namespace bilevel
