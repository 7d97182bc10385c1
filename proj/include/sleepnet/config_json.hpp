#pragma once

// JSON (de)serialization for the configuration structs. Parsers reject
// unknown keys so a typo in a run config fails loudly instead of silently
// falling back to a default.

#include <string>

#include <json.hpp>

#include "sleepnet/dsp.hpp"
#include "sleepnet/model.hpp"

namespace sleepnet {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

nlohmann::json preprocess_config_to_json(const PreprocessConfig& cfg);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j, PreprocessConfig base = {});

// Throws ConfigError when `j` holds a key outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where);

}  // namespace sleepnet
