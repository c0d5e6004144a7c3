#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bilevel meta-learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::size_t threads = 0;
  auto* run = app.add_subcommand("run", "Train from a JSON config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--set", overrides, "Override a config field, e.g. inner.steps=3")
      ->take_all()
      ->expected(1, -1);
  auto* threads_opt = run->add_option("--threads", threads, "Worker threads per meta step")
                          ->check(CLI::PositiveNumber);

  std::string profile = "exact";
  std::string report;
  auto* verify = app.add_subcommand("verify", "Run the hypergradient check suite");
  verify->add_option("--profile", profile, "exact | fd | all");
  auto* report_opt = verify->add_option("--report", report, "Write one JSON object per check");

  auto* list = app.add_subcommand("list-methods", "Print the named method compositions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bilevel::cli::kExitConfigError;
  }

  if (*run) {
    bilevel::cli::RunOptions options{config_path, out_dir, overrides, std::nullopt};
    if (*threads_opt) options.threads = threads;
    return bilevel::cli::cmd_run(options, std::cout, std::cerr);
  }
  if (*verify) {
    std::optional<std::filesystem::path> report_path;
    if (*report_opt) report_path = report;
    return bilevel::cli::cmd_verify(profile, std::cout, std::cerr, report_path);
  }
  if (*list) return bilevel::cli::cmd_list_methods(std::cout);
  return bilevel::cli::kExitConfigError;
}
