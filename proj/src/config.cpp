#include "fedr/config.hpp"

#include <fstream>
#include <functional>
#include <set>

namespace fedr {

using nlohmann::json;

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name("") + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  template <typename F>
  void section(const std::string& key, F&& read) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    ObjectReader sub(j_.at(key), name(key));
    read(sub);
    sub.finish();
  }

  void get_enum(const std::string& key, const std::function<void(const std::string&)>& set) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError("config key '" + name(key) + "' must be a string");
    try {
      set(j_.at(key).get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + name(key) + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown config key '" + name(key) + "'");
    }
  }

 private:
  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> known_;
};

void read_model(ObjectReader& r, ModelConfig& m) {
  r.get("hidden", m.hidden);
  r.get("embed_dim", m.embed_dim);
  r.get("window", m.window);
  r.get("context_len", m.context_len);
  r.get("init_scale", m.init_scale);
  r.get("sft_epochs", m.sft_epochs);
  r.get("sft_lr", m.sft_lr);
  r.get("sft_batch", m.sft_batch);
}

json model_json(const ModelConfig& m) {
  return {{"hidden", m.hidden},         {"embed_dim", m.embed_dim},   {"window", m.window},
          {"context_len", m.context_len}, {"init_scale", m.init_scale}, {"sft_epochs", m.sft_epochs},
          {"sft_lr", m.sft_lr},         {"sft_batch", m.sft_batch}};
}

const char* mode_name(SelectionMode m) { return m == SelectionMode::threshold ? "threshold" : "top_k"; }

}  // namespace

void FederationConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(rounds >= 1, "rounds must be >= 1");
  need(clients >= 1, "clients must be >= 1");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(batches_per_round >= 1, "batches_per_round must be >= 1");
  need(epochs_per_round >= 0, "epochs_per_round must be >= 0");
  need(lr_client >= 0 && lr_server >= 0, "learning rates must be >= 0");
  need(alpha >= 0 && alpha <= 1, "alpha must be in [0,1]");
  need(lambda >= 0, "lambda must be >= 0");
  need(beta >= 0, "beta must be >= 0");
  need(cold_start_k >= 1, "cold_start_k must be >= 1");
  need(decode.max_new_tokens >= 1, "decode.max_new_tokens must be >= 1");
  need(decode.mode == DecodeMode::greedy || decode.temperature > 0,
       "decode.temperature must be > 0 when sampling");
  need(filter.feature_dim >= 8, "filter.feature_dim must be >= 8");
  need(filter.width >= 1 && filter.blocks >= 1 && filter.explore_width >= 1 &&
           filter.explore_blocks >= 1,
       "filter widths and depths must be >= 1");
  need(filter.epochs >= 0 && filter.lr >= 0, "filter.epochs and filter.lr must be >= 0");
  need(filter.selection.top_k >= 1, "filter.selection.top_k must be >= 1");
  need(filter.selection.min_count >= 1,
       "filter.selection.min_count must be >= 1 so every batch has a loss to average");
  for (const auto* m : {&client_model, &server_model}) {
    need(m->hidden >= 1 && m->embed_dim >= 1 && m->window >= 1 && m->context_len >= 8,
         "model shapes must be positive");
    need(m->sft_epochs >= 0 && m->sft_lr >= 0 && m->sft_batch >= 1, "invalid sft schedule");
  }
  need(fedkd_epochs >= 0 && fedkd_lr >= 0, "invalid fedkd schedule");
}

FederationConfig config_from_json(const json& j) {
  FederationConfig c;
  ObjectReader r(j, "");
  r.get("rounds", c.rounds);
  r.get("clients", c.clients);
  r.get("batches_per_round", c.batches_per_round);
  r.get("batch_size", c.batch_size);
  r.get("epochs_per_round", c.epochs_per_round);
  r.get("lr_client", c.lr_client);
  r.get("lr_server", c.lr_server);
  r.get("alpha", c.alpha);
  r.get("lambda", c.lambda);
  r.get("beta", c.beta);
  r.get("cold_start_k", c.cold_start_k);
  r.get("seed", c.seed);
  r.get_enum("train_mode", [&](const std::string& s) { c.train_mode = prompt_mode_from_string(s); });
  r.section("decode", [&](ObjectReader& d) {
    d.get_enum("mode", [&](const std::string& s) {
      if (s == "greedy") c.decode.mode = DecodeMode::greedy;
      else if (s == "sampled") c.decode.mode = DecodeMode::sampled;
      else throw ConfigError("unknown decode mode '" + s + "'");
    });
    d.get("temperature", c.decode.temperature);
    d.get("max_new_tokens", c.decode.max_new_tokens);
    d.get("seed", c.decode.seed);
  });
  r.section("filter", [&](ObjectReader& f) {
    f.get("feature_dim", c.filter.feature_dim);
    f.get("width", c.filter.width);
    f.get("blocks", c.filter.blocks);
    f.get("explore_width", c.filter.explore_width);
    f.get("explore_blocks", c.filter.explore_blocks);
    f.get("lr", c.filter.lr);
    f.get("epochs", c.filter.epochs);
    f.section("selection", [&](ObjectReader& s) {
      s.get_enum("mode", [&](const std::string& m) {
        if (m == "threshold") c.filter.selection.mode = SelectionMode::threshold;
        else if (m == "top_k") c.filter.selection.mode = SelectionMode::top_k;
        else throw ConfigError("unknown selection mode '" + m + "'");
      });
      s.get("threshold", c.filter.selection.threshold);
      s.get("min_count", c.filter.selection.min_count);
      s.get("max_count", c.filter.selection.max_count);
      s.get("top_k", c.filter.selection.top_k);
    });
  });
  r.section("client_model", [&](ObjectReader& m) { read_model(m, c.client_model); });
  r.section("server_model", [&](ObjectReader& m) { read_model(m, c.server_model); });
  r.get("fedkd_epochs", c.fedkd_epochs);
  r.get("fedkd_lr", c.fedkd_lr);
  r.finish();
  c.filter.lambda = c.lambda;
  c.validate();
  return c;
}

json config_to_json(const FederationConfig& c) {
  json j;
  j["rounds"] = c.rounds;
  j["clients"] = c.clients;
  j["batches_per_round"] = c.batches_per_round;
  j["batch_size"] = c.batch_size;
  j["epochs_per_round"] = c.epochs_per_round;
  j["lr_client"] = c.lr_client;
  j["lr_server"] = c.lr_server;
  j["alpha"] = c.alpha;
  j["lambda"] = c.lambda;
  j["beta"] = c.beta;
  j["cold_start_k"] = c.cold_start_k;
  j["seed"] = c.seed;
  j["train_mode"] = to_string(c.train_mode);
  j["decode"] = {{"mode", c.decode.mode == DecodeMode::greedy ? "greedy" : "sampled"},
                 {"temperature", c.decode.temperature},
                 {"max_new_tokens", c.decode.max_new_tokens},
                 {"seed", c.decode.seed}};
  j["filter"] = {{"feature_dim", c.filter.feature_dim},
                 {"width", c.filter.width},
                 {"blocks", c.filter.blocks},
                 {"explore_width", c.filter.explore_width},
                 {"explore_blocks", c.filter.explore_blocks},
                 {"lr", c.filter.lr},
                 {"epochs", c.filter.epochs},
                 {"selection",
                  {{"mode", mode_name(c.filter.selection.mode)},
                   {"threshold", c.filter.selection.threshold},
                   {"min_count", c.filter.selection.min_count},
                   {"max_count", c.filter.selection.max_count},
                   {"top_k", c.filter.selection.top_k}}}};
  j["client_model"] = model_json(c.client_model);
  j["server_model"] = model_json(c.server_model);
  j["fedkd_epochs"] = c.fedkd_epochs;
  j["fedkd_lr"] = c.fedkd_lr;
  return j;
}

FederationConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace fedr
