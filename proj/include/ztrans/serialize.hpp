#pragma once

#include <json.hpp>

#include "ztrans/model.hpp"

namespace ztrans {

nlohmann::json to_json(const model::TransformerConfig& c);
model::TransformerConfig transformer_config_from_json(const nlohmann::json& j);

}  // namespace ztrans
