#pragma once

#include <json.hpp>

#include "cxlmem/emulator.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem::detail {

nlohmann::json to_json_value(const Topology& topo);
nlohmann::json to_json_value(const Composition& c);
Composition composition_from_json_value(const nlohmann::json& j);

nlohmann::json parse_json(std::string_view text, std::string_view what);

}  // namespace cxlmem::detail
