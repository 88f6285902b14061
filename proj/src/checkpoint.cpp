#include "fedr/checkpoint.hpp"

#include <fstream>

namespace fedr {

using nlohmann::json;

namespace {

json shape_to_json(const PolicyShape& s) {
  return {{"vocab_size", s.vocab_size}, {"context_len", s.context_len}, {"embed_dim", s.embed_dim},
          {"window", s.window},         {"hidden", s.hidden}};
}

json mlp_to_json(const ResidualMlp& m) {
  return {{"input_dim", m.input_dim()}, {"width", m.width()}, {"blocks", m.blocks()},
          {"params", m.params()}};
}

json filter_to_json(const FilterState& f) {
  return {{"learner", f.learner}, {"teacher", f.teacher}, {"lambda", f.lambda},
          {"exploit", mlp_to_json(f.exploit)}, {"explore", mlp_to_json(f.explore)}};
}

}  // namespace

json policy_to_json(const TokenPolicy& p) {
  return {{"role", p.role()}, {"shape", shape_to_json(p.shape())}, {"params", p.params()}};
}

TokenPolicy policy_from_json(const json& j) {
  try {
    PolicyShape s;
    const auto& js = j.at("shape");
    s.vocab_size = js.at("vocab_size").get<int>();
    s.context_len = js.at("context_len").get<int>();
    s.embed_dim = js.at("embed_dim").get<int>();
    s.window = js.at("window").get<int>();
    s.hidden = js.at("hidden").get<int>();
    return TokenPolicy::from_params(s, j.at("role").get<std::string>(), j.at("params").get<Vec>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

json checkpoint_to_json(const RoundState& state) {
  json j;
  j["format"] = "fedr-checkpoint";
  j["version"] = kCheckpointVersion;
  j["round"] = state.round;
  json policies = json::array();
  json references = json::array();
  json filters = json::array();
  for (const auto& c : state.clients) {
    policies.push_back(policy_to_json(c.policy));
    if (c.reference) {
      references.push_back({{"role", c.reference->source_role()},
                            {"frozen_round", c.reference->frozen_round()},
                            {"params", c.reference->params()}});
    }
    if (c.filter) filters.push_back(filter_to_json(*c.filter));
  }
  policies.push_back(policy_to_json(state.server.policy));
  if (state.server.reference) {
    references.push_back({{"role", state.server.reference->source_role()},
                          {"frozen_round", state.server.reference->frozen_round()},
                          {"params", state.server.reference->params()}});
  }
  for (const auto& f : state.server.filters) filters.push_back(filter_to_json(f));
  j["policies"] = std::move(policies);
  j["references"] = std::move(references);
  j["filters"] = std::move(filters);
  return j;
}

void save_checkpoint(const std::string& path, const RoundState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << checkpoint_to_json(state).dump();
  if (!out) throw Error("write failed for " + path);
}

std::map<std::string, TokenPolicy> load_checkpoint_policies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "fedr-checkpoint" || j.value("version", 0) != kCheckpointVersion) {
    throw ParseError("checkpoint " + path + " has an unsupported format or version");
  }
  std::map<std::string, TokenPolicy> out;
  for (const auto& p : j.at("policies")) {
    auto pol = policy_from_json(p);
    out.emplace(pol.role(), std::move(pol));
  }
  return out;
}

}  // namespace fedr
