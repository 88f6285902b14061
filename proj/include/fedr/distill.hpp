#pragma once

// Contrastive reasoning-distillation losses. The client prefers the server's
// response over its own; the server prefers the client's response over its
// own, with overlapping selections weighted across clients.

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedr/policy.hpp"

namespace fedr {

struct DistillConfig {
  double beta = 0.1;
};

struct ReasoningTriple {
  std::string sample_id;
  Tokens prompt;
  Tokens client_response;
  Tokens server_response;
};

void validate_triple(const ReasoningTriple& t);

// Log-ratio margin log(pi/ref)(preferred) - log(pi/ref)(dispreferred).
double client_margin(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref);
double server_margin(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref);

// -log sigma(beta * margin)
inline double preference_loss(double margin, double beta) { return neg_log_sigmoid(beta * margin); }

double client_loss(const ReasoningTriple& t, const TokenPolicy& policy,
                   const ReferenceSnapshot& ref, const DistillConfig& cfg);
Vec client_loss_grad(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref, const DistillConfig& cfg);

struct BatchLoss {
  double mean = 0.0;
  Vec per_sample;
  Vec grad;  // empty unless requested
};

// Mean client loss over a selection (the expectation realised as a batch
// mean). Gradient is of the mean.
BatchLoss client_batch_loss(const std::vector<ReasoningTriple>& triples, const TokenPolicy& policy,
                            const ReferenceSnapshot& ref, const DistillConfig& cfg,
                            bool with_grad);

// Per-pair loss in the server direction, for one client's selection. Used for
// the server-side filter rewards.
BatchLoss server_pair_batch_loss(const std::vector<ReasoningTriple>& triples,
                                 const TokenPolicy& policy, const ReferenceSnapshot& ref,
                                 const DistillConfig& cfg);

struct OverlapPartition {
  std::map<std::string, std::vector<int>> overlapping;  // id -> selecting clients (sorted)
  std::map<std::string, int> disjoint;                  // id -> the single selecting client
  std::map<std::pair<std::string, int>, double> weights;
};

OverlapPartition overlap_partition(const std::map<int, std::set<std::string>>& filtered);

using TripleMap = std::map<std::pair<std::string, int>, ReasoningTriple>;

double server_loss(const TripleMap& triples, const OverlapPartition& partition,
                   const TokenPolicy& policy, const ReferenceSnapshot& ref,
                   const DistillConfig& cfg);
Vec server_loss_grad(const TripleMap& triples, const OverlapPartition& partition,
                     const TokenPolicy& policy, const ReferenceSnapshot& ref,
                     const DistillConfig& cfg);

}  // namespace fedr
