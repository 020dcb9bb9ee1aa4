#pragma once

#include <string>

#include "json.hpp"

namespace anchorlab {

// Compact JSON with object keys in sorted order.
std::string canonical_json(const nlohmann::json& j);

// 16 hex digits of FNV-1a 64 over canonical_json(j).
std::string fingerprint(const nlohmann::json& j);

}  // namespace anchorlab
