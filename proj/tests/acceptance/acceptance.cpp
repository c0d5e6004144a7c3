// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "bilevel/error.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/trainer.hpp"
#include "bilevel/verify.hpp"
#include "commands.hpp"

namespace {

using namespace bilevel;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c);
  return buf;
}

// Small synthetic 5-way 1-shot experiment shared by several criteria.
ExperimentConfig synthetic_config(const std::string& method) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.problem.hidden = 16;
  cfg.problem.regularizer = Regularizer::l2(0.01);
  cfg.data.num_classes = 20;
  cfg.data.dim = 8;
  cfg.data.episode = EpisodeSpec{5, 1, 5, 4};
  cfg.inner.steps = 5;
  cfg.inner.step_size = 0.1;
  cfg.run.meta_iterations = 10;
  cfg.run.eval_every = 5;
  cfg.run.eval_tasks = 10;
  return cfg;
}

Outcome method_parity() {
  const auto start = Clock::now();
  std::vector<std::string> problems;
  for (const MethodComposition& m : named_methods()) {
    try {
      BuiltExperiment e = build_experiment(synthetic_config(m.name));
      const auto records = meta_train(e.state, e.components);
      if (records.size() != 10) problems.push_back(m.name + " ran " + std::to_string(records.size()));
    } catch (const std::exception& ex) {
      problems.push_back(m.name + ": " + ex.what());
    }
  }

  std::ostringstream listing;
  cli::cmd_list_methods(listing);
  std::istringstream in(listing.str());
  std::vector<std::string> names;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) names.push_back(line.substr(0, line.find(' ')));
  const std::vector<std::string> expected{"RHG",    "TRHG",     "HOAG",     "MAML",  "FMAML",
                                          "MT-net", "Meta-SGD", "WarpGrad", "DARTS", "BDA"};
  if (names != expected) problems.push_back("list-methods rows differ from the method table");

  const double secs = seconds_since(start);
  if (secs >= 60.0) problems.push_back(fmt("took %.1f s", secs));
  Outcome out{problems.empty(), fmt("10 methods x 10 meta-iterations, %.2f s", secs)};
  for (const auto& p : problems) out.detail += "; " + p;
  return out;
}

Outcome oracle_agreement() {
  const auto start = Clock::now();
  struct Case {
    const char* label;
    ProblemPtr problem;
    Paradigm paradigm;
    TaskDataset task;
    InnerConfig inner;
    double tol;
  };
  QuadraticSpec spec;
  spec.a = {1.0, 0.5, -0.3, 0.8, 0.2, 1.2};
  spec.cols = 2;
  spec.lam = 0.5;
  spec.b = {0.3, -0.7, 1.1};
  const std::vector<Case> cases{
      {"quadratic", make_quadratic(spec), Paradigm::kMetaFeature, {}, InnerConfig{10, 0.3}, 1e-4},
      {"softmax_feature", make_meta_feature_softmax(4, 3, 3, Regularizer::l2(0.01)), Paradigm::kMetaFeature,
       make_check_task(4, 3, 2, 3, 21), InnerConfig{5, 0.5}, 1e-4},
      {"mlp_init", make_meta_init_mlp(4, 6, 3, LossKind::kCrossEntropy, Regularizer::none()),
       Paradigm::kMetaInit, make_check_task(4, 3, 2, 3, 22), InnerConfig{3, 0.3}, 1e-2},
  };
  RngStream rng(2024, 0);
  std::string detail;
  bool pass = true;
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const ParamVector x = [&] {
        ParamVector v(build_meta_layout(*c.problem, c.paradigm, c.inner.rule));
        for (double& e : v.values()) e = rng.normal(0.0, 0.5);
        return v;
      }();
      const RngStream y0_rng = rng.derive(static_cast<std::uint64_t>(trial));
      RngStream draw = y0_rng;
      const ParamVector y0 = init_task_params(c.paradigm, *c.problem, x, draw);
      const InnerTrajectory traj = run_inner(c.inner, *c.problem, x, y0, c.task, true);
      const ParamVector g = hypergrad_reverse(*c.problem, c.paradigm, traj, x, c.task).grad_x;
      const ParamVector fd = fd_hypergradient(*c.problem, c.paradigm, c.inner, x, y0_rng, c.task);
      worst = std::max(worst, relative_error(g, fd));
    }
    pass = pass && worst <= c.tol;
    detail += c.label + fmt(" max rel err %.2e (tol %.0e); ", worst, c.tol);
  }
  const double secs = seconds_since(start);
  pass = pass && secs < 60.0;
  return {pass, detail + fmt("%.2f s", secs)};
}

Outcome analytic_convergence() {
  const QuadraticSpec spec = QuadraticSpec::scalar(2.0, 1.0, {1.0});
  const ProblemPtr q = make_quadratic(spec);
  const ParamVector x(q->meta_layout(), 2.0);
  const ParamVector exact = analytic_quadratic_hypergrad(spec, x);
  const InnerTrajectory traj = run_inner(InnerConfig{200, 0.25}, *q, x, ParamVector(q->y_layout()), {}, true);
  const double rev = relative_error(hypergrad_reverse(*q, Paradigm::kMetaFeature, traj, x, {}).grad_x, exact);
  const double imp = relative_error(
      hypergrad_implicit(*q, Paradigm::kMetaFeature, x, traj.final_iterate(), {}, ImplicitMethod{1e-10, 200, 0.0})
          .grad_x,
      exact);
  return {rev <= 1e-3 && imp <= 1e-6, fmt("reverse rel err %.2e (tol 1e-3), implicit rel err %.2e (tol 1e-6)", rev, imp)};
}

Outcome structural_identities() {
  const ProblemPtr p = make_meta_init_mlp(4, 5, 3, LossKind::kCrossEntropy, Regularizer::l2(0.01));
  const TaskDataset task = make_check_task(4, 3, 2, 3, 31);
  RngStream rng(31, 0);
  const std::size_t T = 6;

  const auto meta = [&](InnerRule rule) {
    return init_meta_params(*p, Paradigm::kMetaInit, InnerConfig{T, 0.2, rule}, rng, 0.5);
  };
  const auto trajectory = [&](InnerConfig cfg, const ParamVector& x) {
    RngStream r(99, 0);
    return run_inner(cfg, *p, x, init_task_params(Paradigm::kMetaInit, *p, x, r), task, true);
  };
  const auto max_traj_diff = [](const InnerTrajectory& a, const InnerTrajectory& b) {
    double d = 0.0;
    for (std::size_t t = 0; t < a.iterates.size(); ++t) d = std::max(d, max_abs_diff(a.at(t), b.at(t)));
    return d;
  };

  const ParamVector x_gd = meta(InnerRule::kGD);
  const InnerTrajectory gd = trajectory(InnerConfig{T, 0.2}, x_gd);
  const double trhg = max_abs_diff(hypergrad_truncated(*p, Paradigm::kMetaInit, gd, x_gd, task, T).grad_x,
                                   hypergrad_reverse(*p, Paradigm::kMetaInit, gd, x_gd, task).grad_x);
  const double bda = max_traj_diff(trajectory(InnerConfig{T, 0.2, InnerRule::kBDA, 1.0}, x_gd), gd);

  ParamVector x_warp = meta(InnerRule::kWarpGradDiag);
  for (double& v : x_warp.segment("warp_logdiag")) v = 0.0;
  std::copy(x_gd.values().begin(), x_gd.values().end(), x_warp.values().begin());
  const double warp = max_traj_diff(trajectory(InnerConfig{T, 0.2, InnerRule::kWarpGradDiag}, x_warp), gd);

  const ProblemPtr flat = make_zero_curvature_problem({0.3, -0.2, 1.0}, {1.0, 0.0, -1.0});
  ParamVector x_flat(build_meta_layout(*flat, Paradigm::kMetaInit, InnerRule::kGD));
  for (double& v : x_flat.values()) v = rng.normal(0.0, 1.0);
  RngStream r(5, 0);
  const InnerTrajectory ft =
      run_inner(InnerConfig{T, 0.4}, *flat, x_flat, init_task_params(Paradigm::kMetaInit, *flat, x_flat, r), {}, true);
  const double fo =
      max_abs_diff(hypergrad_first_order(*flat, Paradigm::kMetaInit, x_flat, ft.final_iterate(), {}).grad_x,
                   hypergrad_reverse(*flat, Paradigm::kMetaInit, ft, x_flat, {}).grad_x);

  const bool pass = trhg <= 1e-12 && bda <= 1e-12 && warp <= 1e-9 && fo <= 1e-10;
  std::string detail = fmt("TRHG(K=T) vs RHG %.1e, BDA(a=1) vs GD %.1e, ", trhg, bda);
  detail += fmt("WarpGrad(0) vs GD %.1e, FO vs reverse (zero curvature) %.1e", warp, fo);
  return {pass, detail};
}

Outcome darts_order() {
  const ProblemPtr p = make_meta_feature_softmax(4, 3, 3, Regularizer::l2(0.01));
  const TaskDataset task = make_check_task(4, 3, 2, 3, 41);
  RngStream rng(41, 0);
  ParamVector x(p->meta_layout());
  for (double& v : x.values()) v = rng.normal(0.0, 0.5);
  ParamVector y0(p->y_layout());
  for (double& v : y0.values()) v = rng.normal(0.0, 0.3);
  const InnerTrajectory traj = run_inner(InnerConfig{1, 0.5}, *p, x, y0, task, true);
  const ParamVector exact = hypergrad_reverse(*p, Paradigm::kMetaFeature, traj, x, task).grad_x;

  std::vector<double> errors;
  for (double delta : {0.4, 0.2, 0.1, 0.05}) {
    errors.push_back(norm(hypergrad_darts(*p, Paradigm::kMetaFeature, traj, x, task, delta).grad_x - exact));
  }
  bool pass = true;
  std::string detail = "halving ratios";
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double ratio = errors[i - 1] / errors[i];
    pass = pass && ratio >= 3.0 && ratio <= 5.0;
    detail += fmt(" %.3f", ratio);
  }

  const ProblemPtr q = make_quadratic(QuadraticSpec::scalar(2.0, 1.0, {1.0, -0.5}));
  ParamVector xq(q->meta_layout());
  xq[0] = 0.7;
  xq[1] = -1.3;
  const InnerTrajectory tq = run_inner(InnerConfig{1, 0.25}, *q, xq, ParamVector(q->y_layout()), {}, true);
  const double quad = relative_error(hypergrad_darts(*q, Paradigm::kMetaFeature, tq, xq, {}, 1e-2).grad_x,
                                     hypergrad_reverse(*q, Paradigm::kMetaFeature, tq, xq, {}).grad_x);
  pass = pass && quad <= 1e-8;
  return {pass, detail + fmt("; quadratic rel err %.1e (tol 1e-8)", quad)};
}

Outcome maml_efficacy() {
  const auto start = Clock::now();
  double gap_sum = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg;
    cfg.method = "MAML";
    cfg.problem.hidden = 32;
    cfg.problem.loss = LossKind::kCrossEntropy;
    cfg.data.num_classes = 20;
    cfg.data.dim = 8;
    cfg.data.cluster_spread = 10.0;
    cfg.data.noise_sd = 0.5;
    cfg.data.episode = EpisodeSpec{5, 1, 15, 4};
    cfg.inner.steps = 1;
    cfg.inner.step_size = 0.1;
    cfg.meta_opt = MomentumSpec{1e-2, 0.9};
    cfg.run.meta_iterations = 500;
    cfg.run.eval_every = 500;
    cfg.run.eval_tasks = 100;
    cfg.run.seed = seed;

    BuiltExperiment e = build_experiment(cfg);
    const RngStream eval_rng = e.components.stream(StreamId::kEvaluation).derive(1'000'000);
    const double before = *meta_evaluate(e.state, e.components, 100, eval_rng).mean_accuracy;
    meta_train(e.state, e.components);
    const double after = *meta_evaluate(e.state, e.components, 100, eval_rng).mean_accuracy;
    gap_sum += after - before;
    per_seed += fmt(" %.3f->%.3f", before, after);
  }
  const double gap = 100.0 * gap_sum / 5.0;
  const double secs = seconds_since(start);
  return {gap >= 15.0 && secs < 300.0,
          fmt("mean gain %.1f points (need 15), %.1f s;", gap, secs) + per_seed};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / ("bilevel_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(root);
  ExperimentConfig cfg = synthetic_config("MAML");
  cfg.run.meta_iterations = 20;
  const auto config_path = root / "config.json";
  std::ofstream(config_path) << config_to_json(cfg).dump(2);

  std::ostringstream sink;
  const auto run = [&](const char* name, std::optional<std::size_t> threads) {
    return cli::cmd_run({config_path, root / name, {}, threads}, sink, sink);
  };
  const int codes = run("a", std::nullopt) | run("b", std::nullopt) | run("c", std::size_t{4});
  const std::string a = slurp(root / "a" / "metrics.jsonl");
  const std::string b = slurp(root / "b" / "metrics.jsonl");
  const bool identical = codes == 0 && !a.empty() && a == b;

  double worst = 0.0;
  std::size_t records = 0;
  bool shapes_match = true;
  std::istringstream sa(a), sc(slurp(root / "c" / "metrics.jsonl"));
  std::string la, lc;
  while (std::getline(sa, la)) {
    if (!std::getline(sc, lc)) {
      shapes_match = false;
      break;
    }
    ++records;
    const auto ja = nlohmann::json::parse(la);
    const auto jc = nlohmann::json::parse(lc);
    for (const auto& [key, value] : ja.items()) {
      if (value.is_number()) {
        worst = std::max(worst, std::abs(value.get<double>() - jc.at(key).get<double>()));
      } else if (value != jc.at(key)) {
        shapes_match = false;
      }
    }
  }
  if (std::getline(sc, lc)) shapes_match = false;
  std::filesystem::remove_all(root);

  const bool pass = identical && shapes_match && records == 20 && worst <= 1e-12;
  return {pass, std::string(identical ? "serial runs byte-identical" : "serial runs differ") +
                    fmt(", threads=4 vs serial max diff %.1e over %.0f records", worst, static_cast<double>(records))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"method parity", method_parity},
      {"hypergradient oracle agreement", oracle_agreement},
      {"analytic convergence", analytic_convergence},
      {"structural identities", structural_identities},
      {"darts order", darts_order},
      {"meta-learning efficacy", maml_efficacy},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
