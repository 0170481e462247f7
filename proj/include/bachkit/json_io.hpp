#pragma once

#include <json.hpp>

#include "bachkit/layout.hpp"

namespace bachkit {

nlohmann::json layout_to_json(const SalientLayout& layout, const Taxonomy& taxonomy);
/// Unknown category names raise ErrorKind::Taxonomy; missing or mistyped fields
/// raise ErrorKind::Validation. Geometry is not validated here.
SalientLayout layout_from_json(const nlohmann::json& j, const Taxonomy& taxonomy);

nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy);
Taxonomy taxonomy_from_json(const nlohmann::json& j);

nlohmann::json violations_to_json(const std::vector<Violation>& violations);

}  // namespace bachkit
