#pragma once

// Round orchestration between one server policy and K client policies:
// SFT/pre-training initialisation, cold-start selections, per-batch reward
// and filter updates, response exchange with byte accounting, contrastive
// updates on both sides, and per-round evaluation.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedr/config.hpp"
#include "fedr/corpus.hpp"
#include "fedr/distill.hpp"
#include "fedr/eval.hpp"
#include "fedr/filter.hpp"
#include "fedr/policy.hpp"
#include "fedr/reward.hpp"

namespace fedr {

// --- messages ----------------------------------------------------------------

enum class MessageKind { sample_ids, responses, envelope };
const char* to_string(MessageKind k);

inline constexpr std::size_t kEnvelopeBytes = 16;

struct MessageRecord {
  int round = 0;
  std::string sender;
  std::string receiver;
  MessageKind kind = MessageKind::envelope;
  std::string payload;
  std::size_t payload_bytes = 0;  // payload.size() + kEnvelopeBytes
};

struct MessageLog {
  std::vector<MessageRecord> records;

  std::size_t total_bytes() const;
  double total_mb() const;  // bytes / 2^20
};

// Appends a record whose size is the encoded payload length plus the envelope.
void account_message(MessageLog& log, int round, const std::string& sender,
                     const std::string& receiver, MessageKind kind, std::string payload);

std::string message_to_jsonl(const MessageRecord& m);
void save_message_log(const std::string& path, const MessageLog& log);

// --- data & state ------------------------------------------------------------

struct FederationData {
  std::vector<LocalDataset> locals;
  DistillationPool pool;
  std::vector<LocalDataset> tests;
  LocalDataset server_corpus;
  McqSample demo;
};

FederationData from_synthetic(SyntheticData d);
// Structural words plus every token that occurs in the data, sorted.
Vocabulary build_vocabulary(const FederationData& data);

std::string client_name(int k);
inline const std::string kServerName = "server";

struct ClientState {
  TokenPolicy policy;
  std::optional<ReferenceSnapshot> reference;
  std::optional<FilterState> filter;
  std::vector<std::string> selection;
  RewardTrace trace;
  Vec round_losses;  // forward losses observed this round
};

struct ServerState {
  TokenPolicy policy;
  std::optional<ReferenceSnapshot> reference;
  std::vector<FilterState> filters;             // one per client
  std::vector<std::vector<std::string>> selections;
  std::vector<RewardTrace> traces;
  OverlapPartition partition;
  Vec round_losses;
};

// A distillation update and the sample ids it consumed, with the position in
// the message log at the time of the update.
struct UpdateRecord {
  int round = 0;
  std::string learner;
  std::vector<std::string> sample_ids;
  std::size_t log_position = 0;
};

struct RoundState {
  int round = 0;  // last completed round
  std::vector<ClientState> clients;
  ServerState server;
  MessageLog log;
  std::vector<UpdateRecord> updates;
};

struct MetricsRow {
  int round = 0;
  std::string model;
  PromptMode mode = PromptMode::zero_shot;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t selected = 0;
  double cum_mb = 0.0;
};

inline constexpr const char* kMetricsHeader = "round,model,mode,accuracy,mean_loss,selected,cum_mb";
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
void save_metrics(const std::string& path, const std::vector<MetricsRow>& rows);

// Shared context for one federation run.
struct Federation {
  Federation(FederationConfig cfg, FederationData data);

  FederationConfig cfg;
  FederationData data;
  Vocabulary vocab;
  std::vector<std::string> pool_ids;
  std::vector<FeatureVector> pool_features;
  std::map<std::string, std::size_t> pool_index;

  PolicyShape client_shape() const;
  PolicyShape server_shape() const;
  Tokens pool_prompt(const std::string& id) const;
  SftConfig client_sft(int k) const;
  SftConfig server_sft() const;
};

// Step 1: client SFT, server pre-training, reference freezing, filters and
// cold-start selections. Returns the round-0 state.
RoundState initialize(const Federation& fed);

RoundState run_round(const Federation& fed, RoundState state);

struct RunResult {
  RoundState state;
  std::vector<MetricsRow> metrics;
  std::vector<EvalReport> initial_reports;  // after SFT, before round 1
};

RunResult run(const Federation& fed);

// Per-round evaluation: every client on its own test set, the server on the
// union of the test sets, both prompt modes.
std::vector<EvalReport> evaluate_all(const Federation& fed, const RoundState& state);
LocalDataset union_tests(const FederationData& data);

// Invariant checks over a finished run; throw ValidationError on violation.
void check_reference_freeze(const RoundState& initial, const RoundState& final_state);
void check_provenance(const RoundState& state);
void check_no_parameters_in_log(const RoundState& state);

}  // namespace fedr
