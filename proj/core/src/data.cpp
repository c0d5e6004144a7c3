#include "bilevel/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <string_view>
#include <type_traits>

#include "bilevel/error.hpp"

namespace bilevel {

namespace fs = std::filesystem;

void EpisodeSpec::validate() const {
  if (way < 1 || shot < 1 || query < 1 || batch_size < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "episode counts (way, shot, query, batch_size) must all be >= 1");
  }
}

DatasetSource make_synthetic_classes(const SyntheticGaussianConfig& config) {
  if (config.num_classes < 2) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic source needs num_classes >= 2");
  }
  if (config.dim < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic source needs dim >= 1");
  if (!(config.noise_sd >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic source needs noise_sd >= 0");
  }
  if (!(config.cluster_spread >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic source needs cluster_spread >= 0");
  }

  SyntheticGaussian source{config, {}};
  RngStream rng(config.seed, 0);
  source.centers.resize(config.num_classes);
  for (auto& center : source.centers) {
    center.resize(config.dim);
    for (double& c : center) c = rng.uniform(-config.cluster_spread, config.cluster_spread);
  }
  return source;
}

namespace {

std::vector<double> parse_csv_row(std::string_view line, const fs::path& file, std::size_t line_no) {
  std::vector<double> row;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    std::string_view field = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw Error(ErrorCode::kParseError, file.string() + ":" + std::to_string(line_no) +
                                              ": cannot parse '" + std::string(field) + "'");
    }
    row.push_back(value);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return row;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

ClassTable load_class_directory(const fs::path& root, const std::string& format) {
  if (format != "csv") {
    throw Error(ErrorCode::kInvalidArgument, "unsupported class file format '" + format + "'");
  }
  if (!fs::is_directory(root)) {
    throw Error(ErrorCode::kIoError, "class directory '" + root.string() + "' does not exist");
  }

  ClassTable table;
  bool have_dim = false;
  for (const fs::path& class_dir : sorted_entries(root, true)) {
    std::vector<std::vector<double>> items;
    for (const fs::path& file : sorted_entries(class_dir, false)) {
      if (file.extension() != ".csv") continue;
      std::ifstream in(file);
      if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + file.string() + "'");
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row = parse_csv_row(line, file, line_no);
        if (!have_dim) {
          table.dim = row.size();
          have_dim = true;
        } else if (row.size() != table.dim) {
          throw Error(ErrorCode::kMixedDimensions,
                      file.string() + ":" + std::to_string(line_no) + ": row has " +
                          std::to_string(row.size()) + " columns, expected " +
                          std::to_string(table.dim));
        }
        items.push_back(std::move(row));
      }
    }
    if (items.empty()) {
      throw Error(ErrorCode::kEmptyClass, "class '" + class_dir.filename().string() + "' has no rows");
    }
    table.names.push_back(class_dir.filename().string());
    table.items.push_back(std::move(items));
  }
  return table;
}

DatasetSource open_class_directory(const fs::path& root, const std::string& format) {
  return ClassDirectory{root, format, load_class_directory(root, format)};
}

std::size_t num_classes(const DatasetSource& source) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SyntheticGaussian>) {
          return s.config.num_classes;
        } else {
          return s.table.names.size();
        }
      },
      source);
}

std::size_t feature_dim(const DatasetSource& source) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SyntheticGaussian>) {
          return s.config.dim;
        } else {
          return s.table.dim;
        }
      },
      source);
}

namespace {

// First k entries of a uniformly shuffled 0..n-1 (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

struct ItemDrawer {
  RngStream& rng;
  std::size_t per_class;

  std::vector<std::pair<std::size_t, std::vector<double>>> operator()(const SyntheticGaussian& s,
                                                                      std::size_t cls) const {
    std::vector<std::pair<std::size_t, std::vector<double>>> out;
    for (std::size_t item = 0; item < per_class; ++item) {
      std::vector<double> x = s.centers[cls];
      for (double& v : x) v += rng.normal(0.0, s.config.noise_sd);
      out.emplace_back(item, std::move(x));
    }
    return out;
  }

  std::vector<std::pair<std::size_t, std::vector<double>>> operator()(const ClassDirectory& d,
                                                                      std::size_t cls) const {
    const auto& items = d.table.items[cls];
    if (items.size() < per_class) {
      throw Error(ErrorCode::kInsufficientItemsPerClass,
                  "class '" + d.table.names[cls] + "' has " + std::to_string(items.size()) +
                      " items, episode needs " + std::to_string(per_class));
    }
    std::vector<std::pair<std::size_t, std::vector<double>>> out;
    for (std::size_t item : sample_without_replacement(items.size(), per_class, rng)) {
      out.emplace_back(item, items[item]);
    }
    return out;
  }
};

}  // namespace

TaskBatch sample_task_batch(const DatasetSource& source, const EpisodeSpec& spec,
                            const RngStream& rng) {
  spec.validate();
  const std::size_t available = num_classes(source);
  if (available < spec.way) {
    throw Error(ErrorCode::kInsufficientClasses, "source has " + std::to_string(available) +
                                                     " classes, episode needs " +
                                                     std::to_string(spec.way));
  }

  TaskBatch batch;
  batch.tasks.reserve(spec.batch_size);
  for (std::size_t t = 0; t < spec.batch_size; ++t) {
    RngStream task_rng = rng.derive(t);
    TaskDataset task;
    task.way = spec.way;
    task.shot = spec.shot;
    task.query = spec.query;
    task.train.reserve(spec.way * spec.shot);
    task.val.reserve(spec.way * spec.query);

    const std::vector<std::size_t> classes = sample_without_replacement(available, spec.way, task_rng);
    ItemDrawer draw{task_rng, spec.shot + spec.query};
    for (std::size_t label = 0; label < classes.size(); ++label) {
      auto items = std::visit([&](const auto& s) { return draw(s, classes[label]); }, source);
      for (std::size_t i = 0; i < items.size(); ++i) {
        Example ex{std::move(items[i].second), label, classes[label], items[i].first};
        (i < spec.shot ? task.train : task.val).push_back(std::move(ex));
      }
    }
    batch.tasks.push_back(std::move(task));
  }
  return batch;
}

}  // namespace bilevel
