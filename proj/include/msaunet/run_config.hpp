#pragma once

#include <filesystem>
#include <string>

#include "msaunet/training.hpp"

// INI run configuration. Sections: model, encoder, loss, optimizer,
// training, dataset, output. Unknown sections or keys are rejected.
namespace msaunet {

struct RunConfig {
  TrainConfig train;
  std::filesystem::path output_dir = "runs/msaunet";
};

// Throws ConfigError naming the offending key or value. Relative dataset
// roots resolve against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Round-trips through parse_run_config.
std::string to_ini(const RunConfig& config);

// One line per key with its default, grouped by section.
std::string describe_config_keys();

}  // namespace msaunet
