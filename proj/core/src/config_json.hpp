#pragma once

// JSON mapping of session configuration, shared by session persistence and
// the HTTP service. Internal to the core build.

#include "json.hpp"

#include "exal/activeloop.hpp"

namespace exal::detail {

nlohmann::json to_json(const SessionConfig& cfg);

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
SessionConfig session_config_from_json(const nlohmann::json& j, SessionConfig base);

ExemplarSpace parse_space(const std::string& s);
const char* space_name(ExemplarSpace s);

}  // namespace exal::detail
