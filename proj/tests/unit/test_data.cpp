#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "bilevel/data.hpp"
#include "bilevel/error.hpp"
#include "test_util.hpp"

namespace bilevel {
namespace {

using testing::TempDir;

SyntheticGaussianConfig synth(std::size_t classes, std::size_t dim, double spread, double noise,
                              std::uint64_t seed) {
  SyntheticGaussianConfig c;
  c.num_classes = classes;
  c.dim = dim;
  c.cluster_spread = spread;
  c.noise_sd = noise;
  c.seed = seed;
  return c;
}

void write_rows(const std::filesystem::path& file, const std::vector<std::vector<double>>& rows) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream f(file);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
}

bool same_examples(const std::vector<Example>& a, const std::vector<Example>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].features != b[i].features || a[i].label != b[i].label ||
        a[i].source_class != b[i].source_class || a[i].source_item != b[i].source_item) {
      return false;
    }
  }
  return true;
}

void expect_task_invariants(const TaskDataset& t, const EpisodeSpec& spec, std::size_t dim) {
  ASSERT_EQ(t.train.size(), spec.way * spec.shot);
  ASSERT_EQ(t.val.size(), spec.way * spec.query);
  std::map<std::size_t, std::size_t> label_of_class;
  std::set<std::pair<std::size_t, std::size_t>> train_items;
  std::vector<std::size_t> per_label_train(spec.way, 0);
  std::vector<std::size_t> per_label_val(spec.way, 0);
  for (const Example& e : t.train) {
    ASSERT_LT(e.label, spec.way);
    ASSERT_EQ(e.features.size(), dim);
    auto [it, inserted] = label_of_class.emplace(e.source_class, e.label);
    ASSERT_EQ(it->second, e.label) << "class mapped to two labels";
    train_items.emplace(e.source_class, e.source_item);
    ++per_label_train[e.label];
  }
  for (const Example& e : t.val) {
    ASSERT_LT(e.label, spec.way);
    ASSERT_EQ(label_of_class.at(e.source_class), e.label);
    ASSERT_EQ(train_items.count({e.source_class, e.source_item}), 0u) << "train/val overlap";
    ++per_label_val[e.label];
  }
  // Bijection between drawn classes and labels.
  ASSERT_EQ(label_of_class.size(), spec.way);
  std::set<std::size_t> labels;
  for (const auto& [c, l] : label_of_class) labels.insert(l);
  ASSERT_EQ(labels.size(), spec.way);
  for (std::size_t l = 0; l < spec.way; ++l) {
    ASSERT_EQ(per_label_train[l], spec.shot);
    ASSERT_EQ(per_label_val[l], spec.query);
  }
}

TEST(SampleTaskBatch, FiveWayOneShotCounts) {
  const DatasetSource src = make_synthetic_classes(synth(20, 8, 10.0, 0.5, 1));
  const EpisodeSpec spec{5, 1, 15, 4};
  const TaskBatch batch = sample_task_batch(src, spec, RngStream(1, 1));
  ASSERT_EQ(batch.tasks.size(), 4u);
  for (const TaskDataset& t : batch.tasks) {
    EXPECT_EQ(t.train.size(), 5u);
    EXPECT_EQ(t.val.size(), 75u);
    expect_task_invariants(t, spec, 8);
  }
}

TEST(SampleTaskBatch, SplitsAreDisjoint) {
  const DatasetSource src = make_synthetic_classes(synth(4, 3, 10.0, 0.5, 2));
  const EpisodeSpec spec{2, 3, 2, 3};
  const TaskBatch batch = sample_task_batch(src, spec, RngStream(2, 1));
  for (const TaskDataset& t : batch.tasks) {
    EXPECT_EQ(t.train.size(), 6u);
    EXPECT_EQ(t.val.size(), 4u);
    expect_task_invariants(t, spec, 3);
  }
}

TEST(SampleTaskBatch, SameSeedSameBatch) {
  const EpisodeSpec spec{2, 2, 3, 3};
  const TaskBatch a =
      sample_task_batch(make_synthetic_classes(synth(2, 2, 10.0, 0.1, 5)), spec, RngStream(5, 1));
  const TaskBatch b =
      sample_task_batch(make_synthetic_classes(synth(2, 2, 10.0, 0.1, 5)), spec, RngStream(5, 1));
  ASSERT_EQ(a.tasks.size(), b.tasks.size());
  for (std::size_t i = 0; i < a.tasks.size(); ++i) {
    EXPECT_TRUE(same_examples(a.tasks[i].train, b.tasks[i].train));
    EXPECT_TRUE(same_examples(a.tasks[i].val, b.tasks[i].val));
  }
  const TaskBatch c =
      sample_task_batch(make_synthetic_classes(synth(2, 2, 10.0, 0.1, 5)), spec, RngStream(5, 2));
  EXPECT_FALSE(same_examples(a.tasks[0].val, c.tasks[0].val));
}

TEST(SampleTaskBatch, InsufficientClasses) {
  const DatasetSource src = make_synthetic_classes(synth(3, 2, 1.0, 0.1, 0));
  try {
    sample_task_batch(src, EpisodeSpec{5, 1, 1, 1}, RngStream(0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientClasses);
  }
}

TEST(SampleTaskBatch, InsufficientItemsPerClass) {
  TempDir dir;
  for (const char* name : {"a", "b"}) {
    write_rows(dir.path() / name / "x.csv", {{1.0, 2.0}, {3.0, 4.0}});
  }
  const DatasetSource src = open_class_directory(dir.path(), "csv");
  try {
    sample_task_batch(src, EpisodeSpec{2, 2, 1, 1}, RngStream(0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientItemsPerClass);
  }
  EXPECT_NO_THROW(sample_task_batch(src, EpisodeSpec{2, 1, 1, 1}, RngStream(0, 0)));
}

TEST(SampleTaskBatch, PropertyInvariantsOverRandomSpecs) {
  RngStream gen(2024, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t classes = 2 + gen.uniform_index(10);
    const std::size_t dim = 1 + gen.uniform_index(6);
    EpisodeSpec spec;
    spec.way = 1 + gen.uniform_index(classes);
    spec.shot = 1 + gen.uniform_index(4);
    spec.query = 1 + gen.uniform_index(6);
    spec.batch_size = 1 + gen.uniform_index(3);
    const DatasetSource src = make_synthetic_classes(synth(classes, dim, 5.0, 1.0, gen.next_u64()));
    const RngStream rng(gen.next_u64(), gen.next_u64());
    const TaskBatch batch = sample_task_batch(src, spec, rng);
    ASSERT_EQ(batch.tasks.size(), spec.batch_size);
    for (const TaskDataset& t : batch.tasks) {
      expect_task_invariants(t, spec, dim);
      EXPECT_EQ(t.way, spec.way);
      EXPECT_EQ(t.shot, spec.shot);
      EXPECT_EQ(t.query, spec.query);
    }
    const TaskBatch again = sample_task_batch(src, spec, rng);
    ASSERT_TRUE(same_examples(batch.tasks.back().val, again.tasks.back().val));
  }
}

TEST(SampleTaskBatch, PropertyDirectorySourceInvariants) {
  TempDir dir;
  RngStream gen(8, 0);
  for (int c = 0; c < 5; ++c) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 6; ++i) rows.push_back({gen.normal(c, 0.1), gen.normal(-c, 0.1)});
    write_rows(dir.path() / ("class" + std::to_string(c)) / "part1.csv",
               {rows.begin(), rows.begin() + 3});
    write_rows(dir.path() / ("class" + std::to_string(c)) / "part2.csv",
               {rows.begin() + 3, rows.end()});
  }
  const DatasetSource src = open_class_directory(dir.path(), "csv");
  for (int trial = 0; trial < 20; ++trial) {
    EpisodeSpec spec{1 + gen.uniform_index(5), 1 + gen.uniform_index(3), 1 + gen.uniform_index(3),
                     2};
    const TaskBatch batch = sample_task_batch(src, spec, RngStream(trial, 3));
    for (const TaskDataset& t : batch.tasks) expect_task_invariants(t, spec, 2);
  }
}

TEST(MakeSyntheticClasses, ZeroNoiseItemsEqualCenter) {
  const DatasetSource src = make_synthetic_classes(synth(3, 4, 10.0, 0.0, 11));
  const auto& centers = std::get<SyntheticGaussian>(src).centers;
  const TaskBatch batch = sample_task_batch(src, EpisodeSpec{3, 2, 2, 2}, RngStream(1, 0));
  for (const TaskDataset& t : batch.tasks) {
    for (const auto* split : {&t.train, &t.val}) {
      for (const Example& e : *split) EXPECT_EQ(e.features, centers[e.source_class]);
    }
  }
}

TEST(MakeSyntheticClasses, SameSeedSameCenters) {
  const auto a = std::get<SyntheticGaussian>(make_synthetic_classes(synth(5, 3, 10.0, 0.5, 4)));
  const auto b = std::get<SyntheticGaussian>(make_synthetic_classes(synth(5, 3, 10.0, 0.5, 4)));
  const auto c = std::get<SyntheticGaussian>(make_synthetic_classes(synth(5, 3, 10.0, 0.5, 5)));
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_NE(a.centers, c.centers);
  for (const auto& center : a.centers) {
    for (double v : center) {
      EXPECT_GE(v, -10.0);
      EXPECT_LE(v, 10.0);
    }
  }
}

TEST(MakeSyntheticClasses, ParameterValidation) {
  EXPECT_THROW(make_synthetic_classes(synth(1, 2, 1.0, 0.1, 0)), Error);
  EXPECT_THROW(make_synthetic_classes(synth(2, 0, 1.0, 0.1, 0)), Error);
  EXPECT_THROW(make_synthetic_classes(synth(2, 2, 1.0, -0.1, 0)), Error);
}

// Least-squares linear classifier (normal equations) as the separability oracle.
TEST(MakeSyntheticClasses, TwoClassesLinearlySeparable) {
  const DatasetSource src = make_synthetic_classes(synth(2, 2, 10.0, 0.1, 21));
  const TaskBatch batch = sample_task_batch(src, EpisodeSpec{2, 50, 50, 1}, RngStream(21, 0));
  const TaskDataset& t = batch.tasks.front();
  double ata[3][3] = {};
  double atb[3] = {};
  for (const Example& e : t.train) {
    const double row[3] = {e.features[0], e.features[1], 1.0};
    const double target = e.label == 0 ? -1.0 : 1.0;
    for (int i = 0; i < 3; ++i) {
      atb[i] += row[i] * target;
      for (int j = 0; j < 3; ++j) ata[i][j] += row[i] * row[j];
    }
  }
  // Gaussian elimination with partial pivoting.
  double m[3][4];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = ata[i][j];
    m[i][3] = atb[i];
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    }
    std::swap(m[col], m[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int k = col; k < 4; ++k) m[r][k] -= f * m[col][k];
    }
  }
  const double w[3] = {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
  std::size_t correct = 0;
  for (const Example& e : t.val) {
    const double score = w[0] * e.features[0] + w[1] * e.features[1] + w[2];
    correct += (score > 0.0) == (e.label == 1) ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(correct) / t.val.size(), 0.99);
}

TEST(LoadClassDirectory, StructureEcho) {
  TempDir dir;
  RngStream rng(1, 0);
  for (const char* name : {"cat", "dog", "emu"}) {
    std::vector<std::vector<double>> rows(4, std::vector<double>(8));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal(0.0, 1.0);
    }
    write_rows(dir.path() / name / "items.csv", rows);
  }
  const ClassTable table = load_class_directory(dir.path(), "csv");
  ASSERT_EQ(table.names.size(), 3u);
  EXPECT_EQ(table.names[0], "cat");
  EXPECT_EQ(table.dim, 8u);
  for (const auto& items : table.items) {
    ASSERT_EQ(items.size(), 4u);
    for (const auto& item : items) EXPECT_EQ(item.size(), 8u);
  }
}

TEST(LoadClassDirectory, ValuesRoundTrip) {
  TempDir dir;
  write_rows(dir.path() / "a" / "x.csv", {{1.5, -2.25e-3}, {3.0, 4.0}});
  write_rows(dir.path() / "b" / "x.csv", {{0.0, 1.0}});
  const ClassTable table = load_class_directory(dir.path(), "csv");
  EXPECT_EQ(table.items[0][0], (std::vector<double>{1.5, -2.25e-3}));
  EXPECT_EQ(table.items[1][0], (std::vector<double>{0.0, 1.0}));
}

TEST(LoadClassDirectory, MixedDimensions) {
  TempDir dir;
  write_rows(dir.path() / "a" / "x.csv", {{1.0, 2.0}, {1.0, 2.0, 3.0}});
  try {
    load_class_directory(dir.path(), "csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMixedDimensions);
  }
}

TEST(LoadClassDirectory, MixedDimensionsAcrossClasses) {
  TempDir dir;
  write_rows(dir.path() / "a" / "x.csv", {{1.0, 2.0}});
  write_rows(dir.path() / "b" / "x.csv", {{1.0, 2.0, 3.0}});
  EXPECT_THROW(load_class_directory(dir.path(), "csv"), Error);
}

TEST(LoadClassDirectory, EmptyClass) {
  TempDir dir;
  write_rows(dir.path() / "a" / "x.csv", {{1.0}});
  std::filesystem::create_directories(dir.path() / "b");
  try {
    load_class_directory(dir.path(), "csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyClass);
  }
}

TEST(LoadClassDirectory, ParseErrorNamesFileAndLine) {
  TempDir dir;
  std::filesystem::create_directories(dir.path() / "a");
  std::ofstream(dir.path() / "a" / "bad.csv") << "1,2\n3,abc\n";
  try {
    load_class_directory(dir.path(), "csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.csv:2"), std::string::npos) << msg;
  }
}

TEST(LoadClassDirectory, MissingRootAndBadFormat) {
  EXPECT_THROW(load_class_directory("/nonexistent/bilevel/root", "csv"), Error);
  TempDir dir;
  write_rows(dir.path() / "a" / "x.csv", {{1.0}});
  EXPECT_THROW(load_class_directory(dir.path(), "npy"), Error);
}

TEST(EpisodeSpec, Validation) {
  EXPECT_THROW((EpisodeSpec{0, 1, 1, 1}.validate()), Error);
  EXPECT_THROW((EpisodeSpec{1, 0, 1, 1}.validate()), Error);
  EXPECT_THROW((EpisodeSpec{1, 1, 0, 1}.validate()), Error);
  EXPECT_THROW((EpisodeSpec{1, 1, 1, 0}.validate()), Error);
  EXPECT_NO_THROW((EpisodeSpec{1, 1, 1, 1}.validate()));
}

}  // namespace
}  // namespace bilevel
