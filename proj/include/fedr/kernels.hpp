#pragma once

// Batched policy kernels. Each has an OpenMP version and a serial reference
// kept for testing and benchmarking. Parallel results do not depend on the
// thread count: work is split into fixed chunks and reduced in chunk order.

#include <span>
#include <vector>

#include "fedr/policy.hpp"

namespace fedr {

struct SequencePair {
  Tokens prompt;
  Tokens response;
};

// Items per reduction chunk in the parallel gradient kernel.
inline constexpr std::size_t kGradChunk = 4;

Vec batch_log_probs(const TokenPolicy& policy, std::span<const SequencePair> pairs);
Vec batch_log_probs_serial(const TokenPolicy& policy, std::span<const SequencePair> pairs);
Vec batch_log_probs(const ReferenceSnapshot& ref, std::span<const SequencePair> pairs);

// sum_i weights[i] * grad log p(response_i | prompt_i). Optionally returns the
// per-item log-probabilities.
Vec weighted_grad_sum(const TokenPolicy& policy, std::span<const SequencePair> pairs,
                      std::span<const double> weights, Vec* log_probs = nullptr);
Vec weighted_grad_sum_serial(const TokenPolicy& policy, std::span<const SequencePair> pairs,
                             std::span<const double> weights, Vec* log_probs = nullptr);

std::vector<Tokens> batch_generate(const TokenPolicy& policy, std::span<const Tokens> prompts,
                                   const DecodeConfig& cfg);
std::vector<Tokens> batch_generate_serial(const TokenPolicy& policy,
                                          std::span<const Tokens> prompts,
                                          const DecodeConfig& cfg);

int parallel_threads();

}  // namespace fedr
