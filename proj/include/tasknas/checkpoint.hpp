#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "tasknas/layers.hpp"
#include "tasknas/network.hpp"

namespace tasknas {

// Checkpoint layout (JSON, format_version 1):
//   {"format": "tasknas-checkpoint", "format_version": 1,
//    "input_shape": [c, h, w],
//    "layers": [{"kind": "conv2d", "out_channels": 8, "kernel": [3, 3], "stride": 1}, ...],
//    "param_count": n, "theta": [n numbers], "seed": u64, "metadata": {...}}
// Numbers are written in shortest round-trip form, so theta reloads bit-exactly.

nlohmann::json layer_to_json(const LayerSpec& spec);
LayerSpec layer_from_json(const nlohmann::json& j);

struct Checkpoint {
  Network network;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `content` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace tasknas
