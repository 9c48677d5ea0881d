#pragma once

#include <string>

#include <json.hpp>

#include "nesr/model.hpp"
#include "nesr/train.hpp"

namespace nesr {

// JSON mirrors of the config structs; field names are the wire format used
// by config files, checkpoints and report provenance. Parsing is strict:
// unknown keys are rejected.
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

std::string config_hash_hex(const ModelConfig& mcfg, const TrainConfig& tcfg);

}  // namespace nesr
