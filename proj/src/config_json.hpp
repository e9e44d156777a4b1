#pragma once

// Internal JSON (de)serialization of TrainConfig, shared by the config
// loader, checkpoints and the CLI. Not part of the public API.

#include "json.hpp"

#include "hf/trainer.hpp"

namespace hf::detail {

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace hf::detail
