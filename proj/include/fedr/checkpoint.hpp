#pragma once

// JSON checkpoints of the trainable state at the end of a run: every policy,
// reference snapshot and filter network, stored with their shapes.

#include <string>

#include "fedr/federation.hpp"
#include "json.hpp"

namespace fedr {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json policy_to_json(const TokenPolicy& p);
TokenPolicy policy_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const RoundState& state);
void save_checkpoint(const std::string& path, const RoundState& state);

// Loads the policies of a checkpoint, keyed by role.
std::map<std::string, TokenPolicy> load_checkpoint_policies(const std::string& path);

}  // namespace fedr
