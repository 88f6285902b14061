#pragma once

// Comparison runs sharing the federation's SFT and evaluation paths:
// Standalone (local SFT only) and FedKD (SFT, then cross-entropy fine-tuning
// of every client on server responses over the whole pool).

#include <vector>

#include "fedr/federation.hpp"
#include "fedr/kernels.hpp"

namespace fedr {

struct BaselineResult {
  RoundState state;
  std::vector<EvalReport> reports;
  std::vector<MetricsRow> metrics;
};

// Metrics rows are tagged round 0 and carry no communication.
BaselineResult run_standalone(const Federation& fed);

// Metrics rows are tagged round 1. The message log holds one id request and
// one responses message per client, both covering the whole pool.
BaselineResult run_fedkd(const Federation& fed);

// Adam cross-entropy fine-tuning on (prompt, response) pairs; returns the mean
// per-token loss of each epoch.
Vec fine_tune(TokenPolicy& policy, const std::vector<SequencePair>& pairs, int epochs, double lr,
              int batch_size, std::uint64_t seed);

std::vector<MetricsRow> metrics_rows(int round, const std::vector<EvalReport>& reports,
                                     double cum_mb);

}  // namespace fedr
