#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bilevel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericAbort = 3;

struct RunOptions {
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::vector<std::string> overrides;  // "dotted.path=value"
  std::optional<std::size_t> threads;
};

// Writes metrics.jsonl, config.resolved.json and final_params.bin to out_dir.
int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);

// profile: exact | fd | all. The optional report receives one JSON object
// per check.
int cmd_verify(const std::string& profile, std::ostream& out, std::ostream& err,
               const std::optional<std::filesystem::path>& report = std::nullopt);

int cmd_list_methods(std::ostream& out);

}  // namespace bilevel::cli
