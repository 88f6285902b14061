#include "fedr/eval.hpp"

#include <cctype>

#include "fedr/kernels.hpp"

namespace fedr {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::optional<int> extract_answer(const std::string& text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
    if (c < 'A' || c > 'D') continue;
    const bool left_ok = i == 0 || !is_word_char(text[i - 1]);
    const bool right_ok = i + 1 == text.size() || !is_word_char(text[i + 1]);
    if (left_ok && right_ok) return c - 'A';
  }
  return std::nullopt;
}

EvalReport evaluate(const TokenPolicy& policy, const std::vector<McqSample>& test, PromptMode mode,
                    const DecodeConfig& decode, const Vocabulary& vocab, const McqSample* demo,
                    std::string model_name) {
  EvalReport r;
  r.model = model_name.empty() ? policy.role() : std::move(model_name);
  r.mode = mode;
  r.n = test.size();
  if (test.empty()) return r;

  std::vector<Tokens> prompts;
  prompts.reserve(test.size());
  for (const auto& s : test) {
    if (!s.answer) throw ValidationError("test sample '" + s.id + "' has no answer");
    prompts.push_back(format_prompt(s, mode, demo, vocab));
  }
  DecodeConfig greedy = decode;
  greedy.mode = DecodeMode::greedy;
  const auto outputs = batch_generate(policy, prompts, greedy);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto got = extract_answer(vocab.decode(outputs[i]));
    if (got && *got == *test[i].answer) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
  return r;
}

}  // namespace fedr
