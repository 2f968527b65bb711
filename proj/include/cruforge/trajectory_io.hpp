// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "cruforge/protocol.hpp"
#include "cruforge/util.hpp"

namespace cruforge {

// {"name": ..., "arguments": {...}} with the wire argument names.
Json tool_call_to_json(const ToolCall& call);
ToolCall tool_call_from_json(const Json& j);  // throws InputError on schema violations

Json turn_to_json(const Turn& turn);
Turn turn_from_json(const Json& j);

Json observation_to_json(const ObservationRef& o);
ObservationRef observation_from_json(const Json& j);

Json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);
void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& ts);

}  // namespace cruforge
