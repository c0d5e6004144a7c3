#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilevel/data.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/inner.hpp"
#include "bilevel/meta_opt.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

enum class ProblemKind {
  kAuto,  // softmax_feature under MetaFeature, mlp under MetaInit
  kQuadratic,
  kSoftmaxFeature,
  kMlp,
};

struct ProblemConfig {
  ProblemKind kind = ProblemKind::kAuto;
  // Used only when the experiment method is "custom".
  Paradigm paradigm = Paradigm::kMetaInit;
  std::size_t dim_feat = 8;
  std::size_t hidden = 32;
  LossKind loss = LossKind::kCrossEntropy;
  Regularizer regularizer;
  QuadraticSpec quadratic = QuadraticSpec::scalar(2.0, 1.0, {1.0});
};

struct DataConfig {
  std::string source = "synthetic";  // or "directory"
  std::size_t num_classes = 20;
  std::size_t dim = 8;
  double cluster_spread = 10.0;
  double noise_sd = 0.5;
  std::optional<std::uint64_t> seed;  // defaults to run.seed
  std::filesystem::path root;
  std::string format = "csv";
  EpisodeSpec episode;
};

struct HyperGradConfig {
  // Used only when the experiment method is "custom":
  // Reverse | TruncatedReverse | Implicit | FirstOrder | Darts.
  std::string kind = "Reverse";
  std::size_t truncation_k = 0;
  double cg_tol = 1e-10;
  std::size_t cg_max_iter = 200;
  std::optional<double> prox_lambda;  // 0 under MetaFeature, 1 under MetaInit
  double darts_delta = 1e-2;
};

struct RunConfig {
  std::size_t meta_iterations = 100;
  std::size_t eval_every = 50;
  std::size_t eval_tasks = 20;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Off by default so metrics files are reproducible byte for byte.
  bool record_wall_time = false;
};

struct ExperimentConfig {
  std::string method = "MAML";  // one of named_methods(), or "custom"
  ProblemConfig problem;
  DataConfig data;
  InnerConfig inner;
  double init_sd = kDefaultInitSd;
  HyperGradConfig hypergrad;
  MetaOptimizerSpec meta_opt = MomentumSpec{};
  RunConfig run;
};

// Paradigm, rule and estimator actually used by an experiment.
MethodComposition resolve_method(const ExperimentConfig& config);
ProblemKind resolve_problem_kind(const ExperimentConfig& config);

// Throws ConfigError naming the offending field path.
void validate(const ExperimentConfig& config);

// Unknown keys and type errors are ConfigErrors with the dotted field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

// Reads and parses a JSON file (ConfigError when missing or malformed).
nlohmann::json load_json_file(const std::filesystem::path& path);

// Applies "dotted.path=value"; the value is parsed as JSON when possible and
// taken as a string otherwise.
void apply_override(nlohmann::json& j, std::string_view assignment);

}  // namespace bilevel
