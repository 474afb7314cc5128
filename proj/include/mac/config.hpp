#pragma once

// Run configuration: model + training settings + paths, read from a JSON file
// and overridden by command-line flags.

#include <filesystem>
#include <string>

#include "mac/model.hpp"
#include "mac/trainer.hpp"

namespace mac {

struct RunConfig {
  ModelConfig model = ModelConfig::defaults();
  TrainConfig train;
  std::string data;  // dataset root
  std::string out;   // run output directory
};

/// Pretty-printed JSON with a stable key order.
std::string to_json(const RunConfig& config, int indent = 2);

/// Overlays the keys present in `text` onto `base`. ConfigError on unknown
/// keys or wrong types, naming the offending field.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace mac
