#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "msaunet/network.hpp"
#include "msaunet/run_config.hpp"

// Named-tensor archive: an 8-byte little-endian header length, a JSON header
// mapping each tensor name to {dtype, shape, data_offsets}, then the raw
// float64 payloads. "__metadata__" carries the run config text and epoch.
namespace msaunet {

struct CheckpointData {
  std::vector<std::pair<std::string, Tensor>> tensors;  // file order
  std::string config_text;
  std::size_t epoch = 0;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const MsauNetState& model, const std::string& config_text, std::size_t epoch,
                     const std::filesystem::path& path);

// Throws CheckpointError on unreadable or corrupt files.
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies every parameter and buffer of the model from the archive. Throws
// ShapeError naming the first tensor whose shape disagrees, CheckpointError
// for a missing one.
void load_weights(MsauNetState& model, const CheckpointData& data);

struct LoadedCheckpoint {
  RunConfig config;
  MsauNetState model;
  std::size_t epoch = 0;
};

// Rebuilds the model described by the embedded config and loads it.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msaunet
