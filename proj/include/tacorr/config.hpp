#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tacorr/pipeline.hpp"

namespace tacorr {

// Named hyperparameter profiles. "desk" is the CPU-scale default; "paper"
// mirrors the published configuration.
TrainConfig profile_config(const std::string& name);

// Flat key-value document; unknown keys are rejected, missing keys fall back
// to the named profile (default "desk"). Throws ConfigError listing every
// offending key.
TrainConfig parse_config(const nlohmann::json& doc);
TrainConfig load_config_file(const std::filesystem::path& path);

// Fully-resolved echo (includes the profile it was based on).
nlohmann::json config_to_json(const TrainConfig& config, const std::string& profile);

// Profile actually named by a document (for echoing).
std::string profile_of(const nlohmann::json& doc);

}  // namespace tacorr
