#pragma once

// FederationConfig and its JSON schema. Unknown keys are rejected with the
// offending key named; every default is materialised by to_json().

#include <cstdint>
#include <string>

#include "fedr/corpus.hpp"
#include "fedr/filter.hpp"
#include "fedr/policy.hpp"
#include "json.hpp"

namespace fedr {

struct ModelConfig {
  int hidden = 16;
  int embed_dim = 12;
  int window = 16;
  int context_len = 96;
  double init_scale = 0.3;
  int sft_epochs = 30;
  double sft_lr = 1e-2;
  int sft_batch = 8;
};

struct FederationConfig {
  int rounds = 5;                // T
  int clients = 3;               // K
  int batches_per_round = 4;     // filter/select/update cycles per round
  int batch_size = 8;            // minibatch size for policy steps over a selection
  int epochs_per_round = 1;      // passes over each new selection
  double lr_client = 0.5;        // eta
  double lr_server = 0.5;        // eta'
  double alpha = 0.5;
  double lambda = 0.5;
  double beta = 0.1;
  int cold_start_k = 16;
  std::uint64_t seed = 1;
  PromptMode train_mode = PromptMode::zero_shot;
  DecodeConfig decode{DecodeMode::greedy, 1.0, 4, 0};
  FilterConfig filter;
  ModelConfig client_model;
  ModelConfig server_model{64, 12, 16, 96, 0.3, 30, 1e-2, 8};
  // FedKD baseline fine-tuning schedule.
  int fedkd_epochs = 5;
  double fedkd_lr = 5e-3;

  void validate() const;
};

FederationConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const FederationConfig& cfg);
FederationConfig load_config(const std::string& path);

// Applies "a.b.c=value" style overrides (value parsed as JSON, falling back to
// a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace fedr
