#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "bilevel/config.hpp"
#include "bilevel/error.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/params_io.hpp"
#include "bilevel/trainer.hpp"
#include "bilevel/verify.hpp"

namespace bilevel::cli {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

bool is_config_error(ErrorCode code) {
  return code == ErrorCode::kConfigError || code == ErrorCode::kUnknownMethod ||
         code == ErrorCode::kParseError || code == ErrorCode::kInvalidArgument;
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  BuiltExperiment built;
  try {
    nlohmann::json j = load_json_file(options.config_path);
    for (const std::string& o : options.overrides) apply_override(j, o);
    ExperimentConfig config = config_from_json(j);
    if (options.threads) config.run.threads = *options.threads;
    built = build_experiment(config);
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }

  const Components& comps = built.components;
  try {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.resolved.json", config_to_json(comps.config).dump(2) + "\n");

    std::ofstream metrics(options.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!metrics) throw Error(ErrorCode::kIoError, "cannot open metrics.jsonl");
    meta_train(built.state, comps, [&](const MetricsRecord& r) {
      metrics << to_json(r).dump() << '\n';
      metrics.flush();
    });
    write_params(options.out_dir / "final_params.bin", built.state.x);
  } catch (const NumericAbort& e) {
    err << "numeric abort at meta-iteration " << e.meta_iter() << ": " << e.what() << '\n';
    return kExitNumericAbort;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_config_error(e.code()) ? kExitConfigError : kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  out << "completed " << comps.config.run.meta_iterations << " meta-iterations of "
      << comps.method.name << "; outputs in " << options.out_dir.string() << '\n';
  return kExitOk;
}

int cmd_verify(const std::string& profile, std::ostream& out, std::ostream& err,
               const std::optional<std::filesystem::path>& report) {
  GradcheckProfile p;
  if (profile == "exact") {
    p = GradcheckProfile::kExact;
  } else if (profile == "fd") {
    p = GradcheckProfile::kFd;
  } else if (profile == "all") {
    p = GradcheckProfile::kAll;
  } else {
    err << "unknown profile '" << profile << "' (expected exact, fd or all)\n";
    return kExitConfigError;
  }

  std::vector<CheckRecord> records;
  try {
    records = run_gradcheck_suite(p);
  } catch (const Error& e) {
    err << "verification aborted: " << e.what() << '\n';
    return kExitFailure;
  }

  std::size_t passed = 0;
  out << std::left << std::setw(16) << "estimator" << std::setw(18) << "problem" << std::setw(14)
      << "rule" << std::setw(34) << "metric" << std::setw(13) << "value" << std::setw(11)
      << "threshold"
      << "result\n";
  for (const CheckRecord& r : records) {
    passed += r.pass ? 1 : 0;
    out << std::left << std::setw(16) << r.estimator << std::setw(18) << r.problem << std::setw(14)
        << r.rule << std::setw(34) << r.metric << std::setw(13) << std::setprecision(4)
        << std::scientific << r.value << std::setw(11) << std::setprecision(1) << r.threshold
        << std::defaultfloat << (r.pass ? "PASS" : "FAIL") << '\n';
  }
  out << passed << "/" << records.size() << " checks passed\n";

  if (report) {
    std::ofstream f(*report, std::ios::binary | std::ios::trunc);
    if (!f) {
      err << "cannot write report " << report->string() << '\n';
      return kExitFailure;
    }
    for (const CheckRecord& r : records) f << to_json(r).dump() << '\n';
  }
  return passed == records.size() ? kExitOk : kExitFailure;
}

int cmd_list_methods(std::ostream& out) {
  const auto& methods = named_methods();
  out << std::left << std::setw(10) << "method" << std::setw(13) << "paradigm" << std::setw(14)
      << "inner_rule"
      << "hypergrad\n";
  for (const MethodComposition& m : methods) {
    out << std::left << std::setw(10) << m.name << std::setw(13) << to_string(m.paradigm)
        << std::setw(14) << to_string(m.rule) << describe(m.method) << '\n';
  }
  return kExitOk;
}

}  // namespace bilevel::cli
