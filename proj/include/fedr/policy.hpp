#pragma once

// Toy token policies standing in for the server LLM and the client SLMs.
//
// Architecture (per predicted position p, context = tokens[0..p)):
//   window  = concat(E[tok[p-W]], ..., E[tok[p-1]])   (zeros before the start)
//   weights = softmax_j(E[tok[j]] . u)                 over the whole context
//   pooled  = sum_j weights_j E[tok[j]]
//   h       = tanh(W1 [window; pooled] + b1)
//   logits  = W2 h + b2
// The fixed window is the feedforward half; the content-addressed pooling is
// the attention half. Width (hidden units) is what separates server from
// client capacity.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "fedr/common.hpp"
#include "fedr/corpus.hpp"

namespace fedr {

struct PolicyShape {
  int vocab_size = 0;
  int context_len = 96;
  int embed_dim = 12;
  int window = 16;
  int hidden = 32;

  bool operator==(const PolicyShape&) const = default;
  std::size_t num_params() const;
};

// Offsets of each block inside the flat parameter vector.
struct ParamLayout {
  explicit ParamLayout(const PolicyShape& s);

  std::size_t embed;   // V x e, row-major by token
  std::size_t query;   // e
  std::size_t w1;      // H x (W*e + e), row-major by hidden unit
  std::size_t b1;      // H
  std::size_t w2;      // V x H
  std::size_t b2;      // V
  std::size_t total;
  std::size_t input_dim;  // W*e + e
};

class TokenPolicy {
 public:
  TokenPolicy() = default;
  // Normal(0, init_scale) weights, zero biases. The output head is scaled
  // down so a fresh policy starts near uniform.
  TokenPolicy(PolicyShape shape, std::string role, std::uint64_t seed, double init_scale = 0.3);

  static TokenPolicy zeros(PolicyShape shape, std::string role);
  static TokenPolicy from_params(PolicyShape shape, std::string role, Vec params);

  const PolicyShape& shape() const { return shape_; }
  const std::string& role() const { return role_; }
  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }
  std::size_t num_params() const { return params_.size(); }

 private:
  PolicyShape shape_;
  std::string role_;
  Vec params_;
};

// Frozen copy of a policy. Only log-probabilities can be taken through it;
// there is no gradient entry point that accepts a snapshot.
class ReferenceSnapshot {
 public:
  ReferenceSnapshot(const TokenPolicy& source, int frozen_round);

  const PolicyShape& shape() const { return frozen_.shape(); }
  const std::string& source_role() const { return frozen_.role(); }
  int frozen_round() const { return frozen_round_; }
  const Vec& params() const { return frozen_.params(); }

  friend double log_prob(const ReferenceSnapshot& ref, const Tokens& prompt,
                         const Tokens& response);

 private:
  TokenPolicy frozen_;
  int frozen_round_;
};

enum class DecodeMode { greedy, sampled };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;
  int max_new_tokens = 4;
  std::uint64_t seed = 0;
};

// Probabilities are floored at this value before taking logs.
inline constexpr double kProbFloor = 1e-12;

double log_prob(const TokenPolicy& policy, const Tokens& prompt, const Tokens& response);
double log_prob(const ReferenceSnapshot& ref, const Tokens& prompt, const Tokens& response);

// Gradient of log_prob with respect to every parameter.
Vec grad_log_prob(const TokenPolicy& policy, const Tokens& prompt, const Tokens& response);

// Adds scale * d log_prob / d params into grad and returns log_prob. grad must
// already have num_params() entries.
double accumulate_grad_log_prob(const TokenPolicy& policy, const Tokens& prompt,
                                const Tokens& response, double scale, Vec& grad);

// Next-token distribution after `context` (pads stripped).
Vec next_token_distribution(const TokenPolicy& policy, const Tokens& context);

// Output includes the terminating <eos> when one is produced. <pad> is never
// emitted.
Tokens generate(const TokenPolicy& policy, const Tokens& prompt, const DecodeConfig& cfg);

void apply_update(TokenPolicy& policy, const Vec& gradient, double lr);

// Adam moments for a flat parameter vector.
struct AdamState {
  Vec m;
  Vec v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step_update(Vec& params, const Vec& grad, double lr);
};

struct SftConfig {
  int epochs = 20;
  double lr = 1e-2;
  int batch_size = 8;
  PromptMode mode = PromptMode::zero_shot;
  std::uint64_t seed = 0;
};

struct SftResult {
  TokenPolicy policy;
  ReferenceSnapshot reference;
  Vec epoch_losses;  // mean cross-entropy per response token, per epoch
};

// Cross-entropy fine-tuning on "<letter> <eos>" continuations of formatted
// prompts (Adam). The snapshot is frozen from the final parameters.
SftResult sft(TokenPolicy policy, const std::vector<McqSample>& data, const SftConfig& cfg,
              const Vocabulary& vocab, const McqSample* demo = nullptr, int freeze_round = 0);

// Mean per-token cross-entropy of the answer continuation.
double mean_answer_cross_entropy(const TokenPolicy& policy, const std::vector<McqSample>& data,
                                 PromptMode mode, const Vocabulary& vocab,
                                 const McqSample* demo = nullptr);

}  // namespace fedr
