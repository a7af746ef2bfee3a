#pragma once

#include <json.hpp>

#include "gapfill/nncore.hpp"

namespace gapfill::detail {

nlohmann::ordered_json param_store_to_json(const nn::ParamStore& store);
nn::ParamStore param_store_from_json(const nlohmann::json& doc);

}  // namespace gapfill::detail
