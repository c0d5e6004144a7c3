#include "bilevel/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <span>
#include <set>

#include "bilevel/error.hpp"

namespace bilevel {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::kConfigError, path + ": " + message);
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Walks one JSON object, remembering its path for diagnostics and rejecting
// keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::initializer_list<std::string_view> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
    const std::set<std::string_view> keys(allowed);
    for (const auto& [key, value] : j_.items()) {
      if (!keys.count(key)) config_error(join(path_, key), "unknown key");
    }
  }

  bool has(std::string_view key) const { return j_.contains(key) && !j_.at(std::string(key)).is_null(); }

  const json& at(std::string_view key) const { return j_.at(std::string(key)); }

  std::string path(std::string_view key) const { return join(path_, key); }

  template <typename T>
  void read(std::string_view key, T& out) const {
    if (!has(key)) return;
    try {
      out = at(key).get<T>();
    } catch (const json::exception& e) {
      config_error(path(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  void read_count(std::string_view key, std::size_t& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
      config_error(path(key), "expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  void read_u64(std::string_view key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      if (!v.is_number_unsigned()) config_error(path(key), "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
};

template <typename Enum, std::size_t N>
Enum parse_enum(const ObjectReader& r, std::string_view key,
                const std::pair<std::string_view, Enum> (&options)[N], Enum fallback) {
  if (!r.has(key)) return fallback;
  std::string text;
  r.read(key, text);
  for (const auto& [name, value] : options) {
    if (name == text) return value;
  }
  std::string valid;
  for (const auto& [name, value] : options) valid += (valid.empty() ? "" : ", ") + std::string(name);
  config_error(r.path(key), "unknown value '" + text + "' (expected one of: " + valid + ")");
}

constexpr std::pair<std::string_view, ProblemKind> kProblemKinds[] = {
    {"auto", ProblemKind::kAuto},
    {"quadratic", ProblemKind::kQuadratic},
    {"softmax_feature", ProblemKind::kSoftmaxFeature},
    {"mlp", ProblemKind::kMlp},
};
constexpr std::pair<std::string_view, Paradigm> kParadigms[] = {
    {"MetaInit", Paradigm::kMetaInit},
    {"MetaFeature", Paradigm::kMetaFeature},
};
constexpr std::pair<std::string_view, LossKind> kLosses[] = {
    {"cross_entropy", LossKind::kCrossEntropy},
    {"mse", LossKind::kMeanSquaredError},
};
constexpr std::pair<std::string_view, Regularizer::Kind> kRegularizers[] = {
    {"none", Regularizer::Kind::kNone},
    {"l1", Regularizer::Kind::kL1},
    {"l2", Regularizer::Kind::kL2},
};
constexpr std::pair<std::string_view, InnerRule> kRules[] = {
    {"GD", InnerRule::kGD},
    {"MetaSGD", InnerRule::kMetaSGD},
    {"BDA", InnerRule::kBDA},
    {"MTNetMask", InnerRule::kMTNetMask},
    {"WarpGradDiag", InnerRule::kWarpGradDiag},
};

template <typename Enum, std::size_t N>
std::string enum_name(const std::pair<std::string_view, Enum> (&options)[N], Enum value) {
  for (const auto& [name, v] : options) {
    if (v == value) return std::string(name);
  }
  return "?";
}

const std::vector<std::string_view>& hypergrad_kinds() {
  static const std::vector<std::string_view> kinds = {"Reverse", "TruncatedReverse", "Implicit",
                                                      "FirstOrder", "Darts"};
  return kinds;
}

void read_quadratic(const ObjectReader& parent, QuadraticSpec& spec) {
  if (!parent.has("quadratic")) return;
  ObjectReader r(parent.at("quadratic"), parent.path("quadratic"), {"a", "lam", "b"});
  std::vector<double> b = spec.b;
  r.read("b", b);
  double lam = spec.lam;
  r.read("lam", lam);
  if (b.empty()) config_error(r.path("b"), "must not be empty");

  if (r.has("a") && r.at("a").is_array()) {
    std::vector<std::vector<double>> rows;
    r.read("a", rows);
    if (rows.size() != b.size() || rows.empty() || rows.front().empty()) {
      config_error(r.path("a"), "matrix must have b.size() non-empty rows");
    }
    QuadraticSpec out;
    out.cols = rows.front().size();
    for (const auto& row : rows) {
      if (row.size() != out.cols) config_error(r.path("a"), "rows must have equal length");
      out.a.insert(out.a.end(), row.begin(), row.end());
    }
    out.lam = lam;
    out.b = b;
    spec = std::move(out);
    return;
  }
  double a = spec.a.empty() ? 2.0 : spec.a.front();
  r.read("a", a);
  spec = QuadraticSpec::scalar(a, lam, b);
}

json quadratic_to_json(const QuadraticSpec& spec) {
  // Scalar multiples of the identity are written back as a scalar.
  const std::size_t n = spec.b.size();
  bool scalar = spec.cols == n && !spec.a.empty();
  for (std::size_t i = 0; scalar && i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double expected = i == j ? spec.a.front() : 0.0;
      if (spec.a[i * n + j] != expected) {
        scalar = false;
        break;
      }
    }
  }
  json a;
  if (scalar) {
    a = spec.a.front();
  } else {
    a = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(std::vector<double>(spec.a.begin() + static_cast<std::ptrdiff_t>(i * spec.cols),
                                      spec.a.begin() + static_cast<std::ptrdiff_t>((i + 1) * spec.cols)));
    }
  }
  return {{"a", a}, {"lam", spec.lam}, {"b", spec.b}};
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  ObjectReader root(j, "", {"method", "problem", "data", "inner", "hypergrad", "meta_opt", "run"});
  root.read("method", cfg.method);

  if (root.has("problem")) {
    ObjectReader r(root.at("problem"), "problem",
                   {"kind", "paradigm", "dim_feat", "hidden", "loss", "regularizer", "quadratic"});
    auto& p = cfg.problem;
    p.kind = parse_enum(r, "kind", kProblemKinds, p.kind);
    p.paradigm = parse_enum(r, "paradigm", kParadigms, p.paradigm);
    r.read_count("dim_feat", p.dim_feat);
    r.read_count("hidden", p.hidden);
    p.loss = parse_enum(r, "loss", kLosses, p.loss);
    if (r.has("regularizer")) {
      ObjectReader reg(r.at("regularizer"), r.path("regularizer"), {"kind", "coef"});
      p.regularizer.kind = parse_enum(reg, "kind", kRegularizers, p.regularizer.kind);
      reg.read("coef", p.regularizer.coef);
    }
    read_quadratic(r, p.quadratic);
  }

  if (root.has("data")) {
    ObjectReader r(root.at("data"), "data",
                   {"source", "num_classes", "dim", "cluster_spread", "noise_sd", "seed", "root",
                    "format", "way", "shot", "query", "batch_size"});
    auto& d = cfg.data;
    r.read("source", d.source);
    r.read_count("num_classes", d.num_classes);
    r.read_count("dim", d.dim);
    r.read("cluster_spread", d.cluster_spread);
    r.read("noise_sd", d.noise_sd);
    if (r.has("seed")) {
      std::uint64_t seed = 0;
      r.read_u64("seed", seed);
      d.seed = seed;
    }
    std::string root_path;
    r.read("root", root_path);
    d.root = root_path;
    r.read("format", d.format);
    r.read_count("way", d.episode.way);
    r.read_count("shot", d.episode.shot);
    r.read_count("query", d.episode.query);
    r.read_count("batch_size", d.episode.batch_size);
  }

  if (root.has("inner")) {
    ObjectReader r(root.at("inner"), "inner", {"rule", "steps", "step_size", "bda_alpha", "init_sd"});
    cfg.inner.rule = parse_enum(r, "rule", kRules, cfg.inner.rule);
    r.read_count("steps", cfg.inner.steps);
    r.read("step_size", cfg.inner.step_size);
    r.read("bda_alpha", cfg.inner.bda_alpha);
    r.read("init_sd", cfg.init_sd);
  }

  if (root.has("hypergrad")) {
    ObjectReader r(root.at("hypergrad"), "hypergrad",
                   {"kind", "truncation_k", "cg_tol", "cg_max_iter", "prox_lambda", "darts_delta"});
    auto& h = cfg.hypergrad;
    r.read("kind", h.kind);
    r.read_count("truncation_k", h.truncation_k);
    r.read("cg_tol", h.cg_tol);
    r.read_count("cg_max_iter", h.cg_max_iter);
    if (r.has("prox_lambda")) {
      double prox = 0.0;
      r.read("prox_lambda", prox);
      h.prox_lambda = prox;
    }
    r.read("darts_delta", h.darts_delta);
  }

  if (root.has("meta_opt")) {
    ObjectReader r(root.at("meta_opt"), "meta_opt", {"kind", "lr", "mu", "beta1", "beta2", "eps_hat"});
    std::string kind = "momentum";
    r.read("kind", kind);
    if (kind == "sgd") {
      SgdSpec s;
      r.read("lr", s.lr);
      cfg.meta_opt = s;
    } else if (kind == "momentum") {
      MomentumSpec m;
      r.read("lr", m.lr);
      r.read("mu", m.mu);
      cfg.meta_opt = m;
    } else if (kind == "adam") {
      AdamSpec a;
      r.read("lr", a.lr);
      r.read("beta1", a.beta1);
      r.read("beta2", a.beta2);
      r.read("eps_hat", a.eps_hat);
      cfg.meta_opt = a;
    } else {
      config_error("meta_opt.kind", "unknown value '" + kind + "' (expected sgd, momentum or adam)");
    }
  }

  if (root.has("run")) {
    ObjectReader r(root.at("run"), "run",
                   {"meta_iterations", "eval_every", "eval_tasks", "seed", "threads", "record_wall_time"});
    r.read_count("meta_iterations", cfg.run.meta_iterations);
    r.read_count("eval_every", cfg.run.eval_every);
    r.read_count("eval_tasks", cfg.run.eval_tasks);
    r.read_u64("seed", cfg.run.seed);
    r.read_count("threads", cfg.run.threads);
    r.read("record_wall_time", cfg.run.record_wall_time);
  }

  validate(cfg);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const MethodComposition resolved = resolve_method(cfg);
  json j;
  j["method"] = cfg.method;

  const auto& p = cfg.problem;
  j["problem"] = {
      {"kind", enum_name(kProblemKinds, resolve_problem_kind(cfg))},
      {"paradigm", enum_name(kParadigms, resolved.paradigm)},
      {"dim_feat", p.dim_feat},
      {"hidden", p.hidden},
      {"loss", enum_name(kLosses, p.loss)},
      {"regularizer", {{"kind", enum_name(kRegularizers, p.regularizer.kind)}, {"coef", p.regularizer.coef}}},
      {"quadratic", quadratic_to_json(p.quadratic)},
  };

  const auto& d = cfg.data;
  j["data"] = {
      {"source", d.source},
      {"num_classes", d.num_classes},
      {"dim", d.dim},
      {"cluster_spread", d.cluster_spread},
      {"noise_sd", d.noise_sd},
      {"seed", d.seed.value_or(cfg.run.seed)},
      {"root", d.root.string()},
      {"format", d.format},
      {"way", d.episode.way},
      {"shot", d.episode.shot},
      {"query", d.episode.query},
      {"batch_size", d.episode.batch_size},
  };

  j["inner"] = {
      {"rule", enum_name(kRules, resolved.rule)},
      {"steps", cfg.inner.steps},
      {"step_size", cfg.inner.step_size},
      {"bda_alpha", cfg.inner.bda_alpha},
      {"init_sd", cfg.init_sd},
  };

  std::string kind = describe(resolved.method);
  kind = kind.substr(0, kind.find('('));
  double prox = 0.0;
  if (const auto* m = std::get_if<ImplicitMethod>(&resolved.method)) prox = m->prox_lambda;
  j["hypergrad"] = {
      {"kind", kind},
      {"truncation_k", cfg.hypergrad.truncation_k},
      {"cg_tol", cfg.hypergrad.cg_tol},
      {"cg_max_iter", cfg.hypergrad.cg_max_iter},
      {"prox_lambda", cfg.hypergrad.prox_lambda.value_or(prox)},
      {"darts_delta", cfg.hypergrad.darts_delta},
  };

  json opt;
  if (const auto* s = std::get_if<SgdSpec>(&cfg.meta_opt)) {
    opt = {{"kind", "sgd"}, {"lr", s->lr}};
  } else if (const auto* m = std::get_if<MomentumSpec>(&cfg.meta_opt)) {
    opt = {{"kind", "momentum"}, {"lr", m->lr}, {"mu", m->mu}};
  } else if (const auto* a = std::get_if<AdamSpec>(&cfg.meta_opt)) {
    opt = {{"kind", "adam"}, {"lr", a->lr}, {"beta1", a->beta1}, {"beta2", a->beta2}, {"eps_hat", a->eps_hat}};
  }
  j["meta_opt"] = opt;

  j["run"] = {
      {"meta_iterations", cfg.run.meta_iterations},
      {"eval_every", cfg.run.eval_every},
      {"eval_tasks", cfg.run.eval_tasks},
      {"seed", cfg.run.seed},
      {"threads", cfg.run.threads},
      {"record_wall_time", cfg.run.record_wall_time},
  };
  return j;
}

MethodComposition resolve_method(const ExperimentConfig& cfg) {
  MethodComposition out;
  if (cfg.method == "custom") {
    out.name = "custom";
    out.paradigm = cfg.problem.paradigm;
    out.rule = cfg.inner.rule;
    const auto& kinds = hypergrad_kinds();
    const auto it = std::find(kinds.begin(), kinds.end(), cfg.hypergrad.kind);
    if (it == kinds.end()) {
      config_error("hypergrad.kind", "unknown value '" + cfg.hypergrad.kind +
                                         "' (expected Reverse, TruncatedReverse, Implicit, FirstOrder or Darts)");
    }
    switch (it - kinds.begin()) {
      case 0: out.method = ReverseMethod{}; break;
      case 1: out.method = TruncatedReverseMethod{}; break;
      case 2: out.method = ImplicitMethod{}; break;
      case 3: out.method = FirstOrderMethod{}; break;
      default: out.method = DartsMethod{}; break;
    }
    out.notes = "custom composition";
  } else {
    try {
      out = compose_named_method(cfg.method);
    } catch (const Error& e) {
      config_error("method", e.what());
    }
  }

  // Fill estimator parameters from the hypergrad section.
  const auto& h = cfg.hypergrad;
  if (auto* t = std::get_if<TruncatedReverseMethod>(&out.method)) {
    t->k = h.truncation_k;
  } else if (auto* m = std::get_if<ImplicitMethod>(&out.method)) {
    m->cg_tol = h.cg_tol;
    m->cg_max_iter = h.cg_max_iter;
    m->prox_lambda = h.prox_lambda.value_or(out.paradigm == Paradigm::kMetaInit ? 1.0 : 0.0);
  } else if (auto* dm = std::get_if<DartsMethod>(&out.method)) {
    dm->delta = h.darts_delta;
  }
  return out;
}

ProblemKind resolve_problem_kind(const ExperimentConfig& cfg) {
  if (cfg.problem.kind != ProblemKind::kAuto) return cfg.problem.kind;
  return resolve_method(cfg).paradigm == Paradigm::kMetaFeature ? ProblemKind::kSoftmaxFeature
                                                                : ProblemKind::kMlp;
}

void validate(const ExperimentConfig& cfg) {
  const MethodComposition m = resolve_method(cfg);
  const ProblemKind kind = resolve_problem_kind(cfg);

  if (m.paradigm == Paradigm::kMetaFeature && kind == ProblemKind::kMlp) {
    config_error("problem.kind", "mlp reads no meta-feature parameters; use softmax_feature or quadratic");
  }
  if (cfg.problem.dim_feat < 1) config_error("problem.dim_feat", "must be >= 1");
  if (!(cfg.problem.regularizer.coef >= 0.0)) config_error("problem.regularizer.coef", "must be >= 0");
  if (kind == ProblemKind::kQuadratic && !(cfg.problem.quadratic.lam > 0.0)) {
    config_error("problem.quadratic.lam", "must be > 0");
  }
  if (kind == ProblemKind::kSoftmaxFeature && cfg.problem.loss != LossKind::kCrossEntropy) {
    config_error("problem.loss", "softmax_feature supports cross_entropy only");
  }

  const auto& d = cfg.data;
  if (d.source != "synthetic" && d.source != "directory") {
    config_error("data.source", "unknown value '" + d.source + "' (expected synthetic or directory)");
  }
  if (d.source == "synthetic") {
    if (d.num_classes < 2) config_error("data.num_classes", "must be >= 2");
    if (d.num_classes < d.episode.way) config_error("data.num_classes", "must be >= data.way");
    if (d.dim < 1) config_error("data.dim", "must be >= 1");
    if (!(d.noise_sd >= 0.0)) config_error("data.noise_sd", "must be >= 0");
    if (!(d.cluster_spread >= 0.0)) config_error("data.cluster_spread", "must be >= 0");
  } else if (d.root.empty()) {
    config_error("data.root", "required when data.source is directory");
  }
  if (d.episode.way < 1) config_error("data.way", "must be >= 1");
  if (d.episode.shot < 1) config_error("data.shot", "must be >= 1");
  if (d.episode.query < 1) config_error("data.query", "must be >= 1");
  if (d.episode.batch_size < 1) config_error("data.batch_size", "must be >= 1");

  if (!(cfg.inner.step_size > 0.0)) config_error("inner.step_size", "must be > 0");
  if (!(cfg.inner.bda_alpha >= 0.0 && cfg.inner.bda_alpha <= 1.0)) {
    config_error("inner.bda_alpha", "must lie in [0, 1]");
  }
  if (!(cfg.init_sd >= 0.0)) config_error("inner.init_sd", "must be >= 0");

  const auto& h = cfg.hypergrad;
  if (!(h.cg_tol > 0.0)) config_error("hypergrad.cg_tol", "must be > 0");
  if (h.cg_max_iter < 1) config_error("hypergrad.cg_max_iter", "must be >= 1");
  if (h.prox_lambda && !(*h.prox_lambda >= 0.0)) config_error("hypergrad.prox_lambda", "must be >= 0");
  if (!(h.darts_delta > 0.0)) config_error("hypergrad.darts_delta", "must be > 0");
  if (std::holds_alternative<TruncatedReverseMethod>(m.method) && h.truncation_k > cfg.inner.steps) {
    config_error("hypergrad.truncation_k", "must not exceed inner.steps");
  }
  if (const auto* im = std::get_if<ImplicitMethod>(&m.method);
      im != nullptr && m.paradigm == Paradigm::kMetaInit && !(im->prox_lambda > 0.0)) {
    config_error("hypergrad.prox_lambda", "must be > 0 for an implicit MetaInit method");
  }
  if (const auto* im = std::get_if<ImplicitMethod>(&m.method);
      im != nullptr && kind != ProblemKind::kQuadratic && !(im->prox_lambda > 0.0) &&
      !(cfg.problem.regularizer.kind == Regularizer::Kind::kL2 && cfg.problem.regularizer.coef > 0.0)) {
    config_error("hypergrad.prox_lambda",
                 "the implicit estimator needs a positive definite LL Hessian; set prox_lambda > 0 or an "
                 "l2 problem.regularizer with coef > 0");
  }
  if (std::holds_alternative<DartsMethod>(m.method) && m.rule != InnerRule::kGD) {
    config_error("inner.rule", "the Darts estimator requires the GD rule");
  }

  try {
    bilevel::validate(cfg.meta_opt);
  } catch (const Error& e) {
    config_error("meta_opt", e.what());
  }

  if (cfg.run.meta_iterations < 1) config_error("run.meta_iterations", "must be >= 1");
  if (cfg.run.eval_every < 1) config_error("run.eval_every", "must be >= 1");
  if (cfg.run.eval_tasks < 1) config_error("run.eval_tasks", "must be >= 1");
  if (cfg.run.threads < 1) config_error("run.threads", "must be >= 1");
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

void apply_override(json& j, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::kConfigError, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::kConfigError, "override key '" + key + "' has an empty part");
    if (!node->is_object()) {
      if (!node->is_null()) throw Error(ErrorCode::kConfigError, key + ": cannot descend into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace bilevel
