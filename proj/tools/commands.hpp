#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ramreid/config.hpp"

namespace ramreid::cli {

// Values collected from the command line; unset flags leave the config alone.
struct CommandOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::optional<std::string> stage;
  std::optional<std::string> selections;
  std::optional<std::string> protocol;
  std::optional<std::size_t> trials;
  std::vector<std::string> assignments;  // raw `key=value` overrides
};

// defaults <- config file <- flags. `--seed` targets the seed of the
// command's own section; for ablate it sets every seed.
KeyValueConfig resolve_command_config(const std::string& command, const CommandOptions& options);

// Cuts train.stages after `stage`, given as a branch name or a checkpoint
// name (baseline, BN, BN+R, RAM).
void limit_stages(KeyValueConfig& config, const std::string& stage);

void cmd_gen_synthetic(const KeyValueConfig& config, const std::filesystem::path& out,
                       std::ostream& log);
void cmd_train(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_extract(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_evaluate(const KeyValueConfig& config, const std::filesystem::path& out,
                  std::ostream& log);
void cmd_ablate(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log);

// Full entry point. Returns the process exit code; failures print
// `error[<category>]: <message>` to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Exit code used for each error category.
int exit_code_for(const std::string& category);

}  // namespace ramreid::cli
