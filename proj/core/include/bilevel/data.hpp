#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "bilevel/rng.hpp"

namespace bilevel {

struct Example {
  std::vector<double> features;
  std::size_t label = 0;
  // Provenance in the source, used to check split disjointness.
  std::size_t source_class = 0;
  std::size_t source_item = 0;
};

// One episode: `train` holds way*shot examples, `val` holds way*query, with
// labels remapped to 0..way-1 in the order the classes were drawn.
struct TaskDataset {
  std::vector<Example> train;
  std::vector<Example> val;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t query = 0;
};

struct TaskBatch {
  std::vector<TaskDataset> tasks;
};

struct EpisodeSpec {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t query = 15;
  std::size_t batch_size = 4;

  void validate() const;
};

struct SyntheticGaussianConfig {
  std::size_t num_classes = 20;
  std::size_t dim = 8;
  double cluster_spread = 10.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;
};

// Class c is centred at mu_c ~ U[-spread, spread]^dim (drawn once from the
// seed); items are mu_c + N(0, noise_sd^2 I), drawn fresh for every episode.
struct SyntheticGaussian {
  SyntheticGaussianConfig config;
  std::vector<std::vector<double>> centers;
};

struct ClassTable {
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<double>>> items;  // [class][item][feature]
  std::size_t dim = 0;
};

struct ClassDirectory {
  std::filesystem::path root;
  std::string format;
  ClassTable table;
};

using DatasetSource = std::variant<SyntheticGaussian, ClassDirectory>;

DatasetSource make_synthetic_classes(const SyntheticGaussianConfig& config);

// Each immediate subdirectory of `root` is one class; every *.csv file inside
// holds one example per row (comma separated, no header).
ClassTable load_class_directory(const std::filesystem::path& root, const std::string& format);
DatasetSource open_class_directory(const std::filesystem::path& root, const std::string& format);

std::size_t num_classes(const DatasetSource& source);
std::size_t feature_dim(const DatasetSource& source);

// Task i of the batch draws from rng.derive(i): classes without replacement,
// then shot + query items per class without replacement.
TaskBatch sample_task_batch(const DatasetSource& source, const EpisodeSpec& spec,
                            const RngStream& rng);

}  // namespace bilevel
