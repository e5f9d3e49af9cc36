#pragma once

// JSON forms of the configuration structs. Readers reject unknown keys and
// keep defaults for missing ones.

#include <string>

#include "json.hpp"
#include "rcan/model.hpp"
#include "rcan/train.hpp"

namespace rcan {

using Json = nlohmann::json;

Json to_json(const ModelConfig& c);
Json to_json(const AugmentParams& p);
Json to_json(const TrainConfig& c);

// Throw ConfigInvalid.
ModelConfig model_config_from_json(const Json& j);
AugmentParams augment_params_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);

// Sets the value at a dot path such as "train.lr0". The value text is
// parsed as JSON, falling back to a plain string. Throws ConfigInvalid for
// paths that do not already exist.
void apply_override(Json& root, const std::string& assignment);

}  // namespace rcan
