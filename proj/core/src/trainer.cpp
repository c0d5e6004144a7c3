#include "bilevel/trainer.hpp"

#include <chrono>
#include <exception>
#include <thread>

#include "bilevel/error.hpp"

namespace bilevel {

nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["meta_iter"] = r.meta_iter;
  j["ul_loss"] = r.ul_loss;
  j["mean_inner_final_loss"] = r.mean_inner_final_loss;
  j["eval_post_adapt_loss"] = r.eval_post_adapt_loss ? nlohmann::json(*r.eval_post_adapt_loss) : nlohmann::json();
  j["eval_post_adapt_accuracy"] =
      r.eval_post_adapt_accuracy ? nlohmann::json(*r.eval_post_adapt_accuracy) : nlohmann::json();
  j["wall_ms"] = r.wall_ms;
  return j;
}

RngStream Components::stream(StreamId id) const {
  return RngStream(config.run.seed, static_cast<std::uint64_t>(id));
}

namespace {

ProblemPtr build_problem(const ExperimentConfig& cfg, const DatasetSource& source) {
  const std::size_t way = cfg.data.episode.way;
  switch (resolve_problem_kind(cfg)) {
    case ProblemKind::kQuadratic:
      return make_quadratic(cfg.problem.quadratic);
    case ProblemKind::kSoftmaxFeature:
      return make_meta_feature_softmax(feature_dim(source), cfg.problem.dim_feat, way,
                                       cfg.problem.regularizer);
    case ProblemKind::kMlp:
    case ProblemKind::kAuto:
      break;
  }
  return make_meta_init_mlp(feature_dim(source), cfg.problem.hidden, way, cfg.problem.loss,
                            cfg.problem.regularizer);
}

DatasetSource build_source(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == "synthetic") {
    SyntheticGaussianConfig sg;
    sg.num_classes = d.num_classes;
    sg.dim = d.dim;
    sg.cluster_spread = d.cluster_spread;
    sg.noise_sd = d.noise_sd;
    sg.seed = d.seed.value_or(cfg.run.seed);
    return make_synthetic_classes(sg);
  }
  DatasetSource source;
  try {
    source = open_class_directory(d.root, d.format);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, std::string("data.root: ") + e.what());
  }
  const std::size_t classes = num_classes(source);
  if (classes < d.episode.way) {
    throw Error(ErrorCode::kConfigError, "data.root: " + std::to_string(classes) +
                                             " classes on disk, data.way needs " +
                                             std::to_string(d.episode.way));
  }
  return source;
}

}  // namespace

BuiltExperiment build_experiment(const ExperimentConfig& config) {
  validate(config);
  Components c{config, resolve_method(config), config.inner, {}, nullptr};
  c.inner.rule = c.method.rule;
  c.source = build_source(config);
  c.problem = build_problem(config, c.source);

  RngStream init_rng = c.stream(StreamId::kMetaInit);
  ParamVector x = init_meta_params(*c.problem, c.method.paradigm, c.inner, init_rng, config.init_sd);
  TrainState state{std::move(x), MetaOptimizer(config.meta_opt), 0};
  return {std::move(c), std::move(state)};
}

TaskOutcome process_task(const Components& c, const ParamVector& x, const TaskDataset& task,
                         RngStream init_rng) {
  const BilevelObjective& problem = *c.problem;
  const ParamVector y0 = init_task_params(c.method.paradigm, problem, x, init_rng, c.config.init_sd);
  const InnerTrajectory traj =
      run_inner(c.inner, problem, x, y0, task, needs_full_trajectory(c.method.method));
  TaskOutcome out{compute_hypergradient(c.method.method, problem, c.method.paradigm, traj, x, task),
                  problem.value(x, traj.final_iterate(), task, Split::kTrain)};
  require_finite(out.inner_final_loss, "inner final loss");
  return out;
}

EvalResult meta_evaluate(const TrainState& state, const Components& c, std::size_t n_tasks,
                         const RngStream& rng) {
  if (n_tasks < 1) throw Error(ErrorCode::kInvalidArgument, "meta_evaluate needs n_tasks >= 1");
  EpisodeSpec spec = c.config.data.episode;
  spec.batch_size = n_tasks;
  const TaskBatch batch = sample_task_batch(c.source, spec, rng.derive(0));
  const RngStream init_root = rng.derive(1);
  const BilevelObjective& problem = *c.problem;

  double loss_sum = 0.0;
  double acc_sum = 0.0;
  bool has_accuracy = true;
  for (std::size_t i = 0; i < batch.tasks.size(); ++i) {
    const TaskDataset& task = batch.tasks[i];
    RngStream init_rng = init_root.derive(i);
    const ParamVector y0 =
        init_task_params(c.method.paradigm, problem, state.x, init_rng, c.config.init_sd);
    const InnerTrajectory traj = run_inner(c.inner, problem, state.x, y0, task, false);
    loss_sum += problem.value(state.x, traj.final_iterate(), task, Split::kVal);
    const auto acc = problem.accuracy(state.x, traj.final_iterate(), task, Split::kVal);
    if (acc) {
      acc_sum += *acc;
    } else {
      has_accuracy = false;
    }
  }
  const double n = static_cast<double>(batch.tasks.size());
  EvalResult result{loss_sum / n, has_accuracy ? std::optional<double>(acc_sum / n) : std::nullopt};
  require_finite(result.mean_val_loss, "meta_evaluate");
  return result;
}

EvalResult meta_evaluate(const TrainState& state, const Components& c, std::size_t n_tasks) {
  return meta_evaluate(state, c, n_tasks, c.stream(StreamId::kEvaluation).derive(state.iteration));
}

MetricsRecord meta_train_step(TrainState& state, const Components& c, std::size_t threads) {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t iter = state.iteration + 1;
  try {
    const TaskBatch batch =
        sample_task_batch(c.source, c.config.data.episode, c.stream(StreamId::kTaskSampling).derive(iter));
    const RngStream init_root = c.stream(StreamId::kTaskInit).derive(iter);
    const std::size_t n = batch.tasks.size();

    std::vector<std::optional<TaskOutcome>> outcomes(n);
    std::vector<std::exception_ptr> failures(n);
    auto work = [&](std::size_t i) {
      try {
        outcomes[i] = process_task(c, state.x, batch.tasks[i], init_root.derive(i));
      } catch (...) {
        failures[i] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < n; i += workers) work(i);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }

    // Reduce in task order so the result does not depend on scheduling.
    ParamVector grad = ParamVector::zeros_like(state.x);
    MetricsRecord record;
    record.meta_iter = iter;
    for (const auto& o : outcomes) {
      grad += o->hypergrad.grad_x;
      record.ul_loss += o->hypergrad.diagnostics.ul_value;
      record.mean_inner_final_loss += o->inner_final_loss;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    grad *= inv_n;
    record.ul_loss *= inv_n;
    record.mean_inner_final_loss *= inv_n;

    state.x = state.optimizer.step(state.x, grad);
    state.iteration = iter;

    if (iter % c.config.run.eval_every == 0) {
      const EvalResult eval = meta_evaluate(state, c, c.config.run.eval_tasks);
      record.eval_post_adapt_loss = eval.mean_val_loss;
      record.eval_post_adapt_accuracy = eval.mean_accuracy;
    }
    if (c.config.run.record_wall_time) {
      record.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    }
    return record;
  } catch (const NumericAbort&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNonFiniteValue) throw NumericAbort(iter, e.what());
    throw;
  }
}

std::vector<MetricsRecord> meta_train(TrainState& state, const Components& c, const MetricsSink& sink) {
  std::vector<MetricsRecord> records;
  records.reserve(c.config.run.meta_iterations);
  for (std::size_t k = 0; k < c.config.run.meta_iterations; ++k) {
    records.push_back(meta_train_step(state, c, c.config.run.threads));
    if (sink) sink(records.back());
  }
  return records;
}

}  // namespace bilevel
