#pragma once

// Multiple-choice sample model, JSONL ingestion, the synthetic skewed task,
// prompt formatting and filter featurization.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedr/common.hpp"

namespace fedr {

inline constexpr int kNumChoices = 4;

struct McqSample {
  std::string id;
  std::string question;
  std::array<std::string, kNumChoices> choices;
  std::optional<int> answer;
  std::optional<std::string> rationale;

  bool operator==(const McqSample&) const = default;
};

// D_k: a client's private labelled data. owner < 0 marks a server-held set.
struct LocalDataset {
  int owner = 0;
  std::vector<McqSample> samples;

  std::size_t size() const { return samples.size(); }
};

// D_p: shared, unanswered prompts.
struct DistillationPool {
  std::vector<McqSample> samples;

  std::size_t size() const { return samples.size(); }
  const McqSample& at(const std::string& id) const;
};

enum class DatasetKind { local, pool };
enum class PromptMode { zero_shot, one_shot };

const char* to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

// Whitespace tokenizer over a closed word list. Id 0 is <pad>, id 1 is <eos>.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> words);

  TokenId id(const std::string& word) const;
  bool contains(const std::string& word) const;
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  Tokens encode(const std::string& text) const;
  std::string decode(const Tokens& tokens) const;

  static constexpr TokenId pad_id = 0;
  static constexpr TokenId eos_id = 1;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Answer letters "A".."D" as they appear in responses.
std::string answer_letter(int index);

// --- JSONL I/O -------------------------------------------------------------

std::vector<McqSample> load_samples(const std::filesystem::path& path, DatasetKind kind);
LocalDataset load_local_dataset(const std::filesystem::path& path, int owner);
DistillationPool load_pool(const std::filesystem::path& path);

std::string to_jsonl_line(const McqSample& s);
void save_samples(const std::filesystem::path& path, const std::vector<McqSample>& samples);

// Checks the pool/local contracts: ids unique, pool unanswered, local answered.
void validate_samples(const std::vector<McqSample>& samples, DatasetKind kind);
void check_disjoint_ids(const DistillationPool& pool, const std::vector<LocalDataset>& locals);

// --- synthetic task --------------------------------------------------------

// Each domain is a hidden lookup table f_d(a, b) in {0..3} over operand pairs.
// Questions read "<domain> <a> <b>"; choices are the four value words v0..v3 in
// fixed order, so the answer index is the table entry. Client k draws most of
// its local data from domain k.
struct SyntheticSpec {
  int clients = 3;
  int n_local_per_client = 48;
  int n_pool = 192;
  int n_test_per_client = 96;
  int n_server_pretrain = 288;
  double own_domain_fraction = 0.8;
  std::vector<std::string> operands = default_operands(6);

  static std::vector<std::string> default_operands(int n);
};

struct SyntheticData {
  std::vector<LocalDataset> locals;
  DistillationPool pool;
  std::vector<LocalDataset> tests;
  LocalDataset server_corpus;  // owner = -1; the server's pre-training data
  McqSample demo;              // worked example used by one-shot prompts
};

SyntheticData generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec);

std::vector<std::string> domain_names(int n);
Vocabulary make_vocabulary(int n_domains, const std::vector<std::string>& operands);

// --- prompts & features ----------------------------------------------------

std::string format_prompt_text(const McqSample& sample, PromptMode mode,
                               const McqSample* demo = nullptr);
Tokens format_prompt(const McqSample& sample, PromptMode mode, const McqSample* demo,
                     const Vocabulary& vocab);
// Target continuation for supervised training: "<letter> <eos>".
Tokens answer_response(const McqSample& sample, const Vocabulary& vocab);

struct FeatureVector {
  Vec values;
  double norm = 0.0;

  std::size_t dim() const { return values.size(); }
};

// Hashed bag-of-tokens over question and choices into d-2 buckets (L2
// normalised), then normalised token count and normalised choice-length
// variance.
FeatureVector featurize(const McqSample& sample, int d = 64);

}  // namespace fedr
