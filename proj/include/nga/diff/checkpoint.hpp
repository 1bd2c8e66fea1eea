#pragma once

// Parameter checkpoints, JSON, format "nga-params" version 1:
//
//   {"format": "nga-params", "version": 1, "model": {...},
//    "params": [{"name": "...", "shape": [r, c], "values": [...]}, ...]}
//
// Values are row-major and written with round-trip precision, so a saved and
// reloaded set is bit-identical. "model" carries the owning model's config.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "nga/diff/nn.hpp"

namespace nga::diff {

inline constexpr const char* kCheckpointFormat = "nga-params";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_checkpoint(const ParameterSet& params, const nlohmann::json& model_config);

// Copies values into the existing leaves; names, order and shapes must match.
void load_checkpoint(ParameterSet& params, const nlohmann::json& checkpoint);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace nga::diff
