#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilevel/config.hpp"
#include "bilevel/data.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/inner.hpp"
#include "bilevel/meta_opt.hpp"
#include "bilevel/objectives.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

struct MetricsRecord {
  std::size_t meta_iter = 0;  // 1-based index of the completed meta step
  double ul_loss = 0.0;       // mean validation loss at y_T over the batch
  double mean_inner_final_loss = 0.0;
  std::optional<double> eval_post_adapt_loss;
  std::optional<double> eval_post_adapt_accuracy;
  double wall_ms = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

nlohmann::json to_json(const MetricsRecord& record);

// Stream ids derived from the run seed.
enum class StreamId : std::uint64_t {
  kTaskSampling = 1,
  kTaskInit = 2,
  kEvaluation = 3,
  kMetaInit = 4,
};

// Everything fixed for the lifetime of a run.
struct Components {
  ExperimentConfig config;
  MethodComposition method;
  InnerConfig inner;  // rule resolved from the method
  DatasetSource source;
  ProblemPtr problem;

  RngStream stream(StreamId id) const;
};

struct TrainState {
  ParamVector x;
  MetaOptimizer optimizer;
  std::size_t iteration = 0;
};

struct BuiltExperiment {
  Components components;
  TrainState state;
};

// Throws ConfigError (with the field path) for invalid configurations.
BuiltExperiment build_experiment(const ExperimentConfig& config);

struct EvalResult {
  double mean_val_loss = 0.0;
  std::optional<double> mean_accuracy;
};

// Adapts from the current x on n_tasks fresh episodes drawn from `rng` and
// reports post-adaptation validation metrics. Never touches `state`.
EvalResult meta_evaluate(const TrainState& state, const Components& components,
                         std::size_t n_tasks, const RngStream& rng);
// Same, with the evaluation stream for the current iteration.
EvalResult meta_evaluate(const TrainState& state, const Components& components,
                         std::size_t n_tasks);

struct TaskOutcome {
  HyperGradResult hypergrad;
  double inner_final_loss = 0.0;
};

// One task: y_0, inner run, hypergradient.
TaskOutcome process_task(const Components& components, const ParamVector& x,
                         const TaskDataset& task, RngStream init_rng);

using MetricsSink = std::function<void(const MetricsRecord&)>;

// One meta step on the next batch; returns its record.
MetricsRecord meta_train_step(TrainState& state, const Components& components,
                              std::size_t threads = 1);

// Runs config.run.meta_iterations steps (NumericAbort on non-finite values).
std::vector<MetricsRecord> meta_train(TrainState& state, const Components& components,
                                      const MetricsSink& sink = {});

}  // namespace bilevel
