#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "prid/data.hpp"
#include "prid/model.hpp"
#include "prid/training.hpp"

namespace prid {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitNumerical = 3 };

/// Settings file: {"preset": "micro"|"standard", "model": {...}, "train": {...}, "noise": {...}}.
/// Model keys override the preset; unknown keys anywhere are rejected.
struct CliConfig {
  std::string preset = "micro";
  nlohmann::json model_overrides = nlohmann::json::object();
  TrainPlan train;
  NoiseSpec noise;

  /// Model configuration for data with `channels` channels (used unless overridden).
  ModelConfig model(std::size_t channels) const;
};

CliConfig parse_cli_config(const nlohmann::json& j);
/// Throws std::invalid_argument; JSON syntax errors carry the line and column.
CliConfig load_cli_config(const std::string& path);

/// Training pairs from every PNG in `dir` (sorted by file name): p x p crops at
/// stride p, each with its own noise seed (spec.seed + crop index).
template <typename T>
std::vector<PatchPair<T>> load_training_pairs(const std::string& dir, std::size_t patch, const NoiseSpec& noise);

/// Runs `prid <command> [flags]`; args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prid
