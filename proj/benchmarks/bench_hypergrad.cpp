#include <benchmark/benchmark.h>

#include "bilevel/hypergrad.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/verify.hpp"

namespace {

using namespace bilevel;

void BM_ConjugateGradient(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Layout layout({{"v", n}});
  ParamVector b(layout, 1.0);
  // tridiagonal, diagonally dominant
  const auto apply = [n](const ParamVector& v) {
    ParamVector out = v;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = 4.0 * v[i] - (i > 0 ? v[i - 1] : 0.0) - (i + 1 < n ? v[i + 1] : 0.0);
    }
    return out;
  };
  for (auto _ : state) benchmark::DoNotOptimize(conjugate_gradient(apply, b, 1e-10, 500));
}
BENCHMARK(BM_ConjugateGradient)->Arg(64)->Arg(1024);

struct MlpFixture {
  ProblemPtr problem = make_meta_init_mlp(16, 32, 5, LossKind::kCrossEntropy, Regularizer::none());
  TaskDataset task = make_check_task(16, 5, 1, 15, 3);
  ParamVector x;
  ParamVector y0;

  explicit MlpFixture(const InnerConfig& cfg) {
    RngStream rng(1, 0);
    x = init_meta_params(*problem, Paradigm::kMetaInit, cfg, rng, 0.1);
    y0 = init_task_params(Paradigm::kMetaInit, *problem, x, rng);
  }
};

void BM_RunInner(benchmark::State& state) {
  const InnerConfig cfg{static_cast<std::size_t>(state.range(0)), 0.1};
  const MlpFixture f(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(run_inner(cfg, *f.problem, f.x, f.y0, f.task, true));
}
BENCHMARK(BM_RunInner)->Arg(1)->Arg(5)->Arg(20);

void BM_HypergradReverse(benchmark::State& state) {
  const InnerConfig cfg{static_cast<std::size_t>(state.range(0)), 0.1};
  const MlpFixture f(cfg);
  const InnerTrajectory traj = run_inner(cfg, *f.problem, f.x, f.y0, f.task, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hypergrad_reverse(*f.problem, Paradigm::kMetaInit, traj, f.x, f.task));
  }
}
BENCHMARK(BM_HypergradReverse)->Arg(1)->Arg(5)->Arg(20);

void BM_HypergradImplicit(benchmark::State& state) {
  const ProblemPtr p = make_meta_feature_softmax(16, 8, 5, Regularizer::l2(0.1));
  const TaskDataset task = make_check_task(16, 5, 1, 15, 4);
  RngStream rng(2, 0);
  const InnerConfig cfg{20, 0.5};
  const ParamVector x = init_meta_params(*p, Paradigm::kMetaFeature, cfg, rng, 0.1);
  const ParamVector y0 = init_task_params(Paradigm::kMetaFeature, *p, x, rng);
  const ParamVector y = run_inner(cfg, *p, x, y0, task, false).final_iterate();
  for (auto _ : state) {
    benchmark::DoNotOptimize(hypergrad_implicit(*p, Paradigm::kMetaFeature, x, y, task, ImplicitMethod{}));
  }
}
BENCHMARK(BM_HypergradImplicit);

}  // namespace

BENCHMARK_MAIN();
