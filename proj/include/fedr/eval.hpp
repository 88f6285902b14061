#pragma once

// Multiple-choice scoring: answer extraction from generated text and accuracy
// over a labelled test set.

#include <optional>
#include <string>
#include <vector>

#include "fedr/corpus.hpp"
#include "fedr/policy.hpp"

namespace fedr {

struct EvalReport {
  std::string model;
  PromptMode mode = PromptMode::zero_shot;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

// First standalone option letter (A-D, either case). A letter is standalone
// when neither neighbour is a letter or digit, so "B." and "(c)" count but
// "bcd" does not.
std::optional<int> extract_answer(const std::string& text);

// Greedy generation per formatted prompt; unextractable output counts as
// wrong. Generation runs in parallel over the test set.
EvalReport evaluate(const TokenPolicy& policy, const std::vector<McqSample>& test, PromptMode mode,
                    const DecodeConfig& decode, const Vocabulary& vocab, const McqSample* demo,
                    std::string model_name = "");

}  // namespace fedr
