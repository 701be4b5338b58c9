#pragma once

#include <string>

#include <json.hpp>

namespace umat {

// Serializes JSON with sorted object keys, no insignificant whitespace and
// doubles formatted with %.17g. Equal values always produce equal bytes, so
// result files can be compared with cmp.
std::string canonical_dump(const nlohmann::json& j);

// canonical_dump plus a trailing newline, written atomically via a temp file.
void write_canonical_json(const nlohmann::json& j, const std::string& path);

}  // namespace umat
