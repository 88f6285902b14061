#include "fedr/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace fedr {

using nlohmann::json;

namespace {

const std::array<const char*, 4> kLetters = {"A", "B", "C", "D"};
const std::array<const char*, 4> kChoiceLabels = {"A.", "B.", "C.", "D."};
const std::array<const char*, 4> kValueWords = {"v0", "v1", "v2", "v3"};
const std::array<const char*, 8> kDomainWords = {"alpha", "beta",  "gamma", "delta",
                                                 "kappa", "sigma", "omega", "theta"};

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    out.push_back(w);
  }
  return out;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace

const McqSample& DistillationPool::at(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) {
      return s;
    }
  }
  throw ValidationError("pool has no sample with id '" + id + "'");
}

const char* to_string(PromptMode m) { return m == PromptMode::zero_shot ? "zero_shot" : "one_shot"; }

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "zero_shot") {
    return PromptMode::zero_shot;
  }
  if (s == "one_shot") {
    return PromptMode::one_shot;
  }
  throw ConfigError("unknown prompt mode '" + s + "'");
}

std::string answer_letter(int index) {
  if (index < 0 || index >= kNumChoices) {
    throw ValidationError("answer index out of range: " + std::to_string(index));
  }
  return kLetters[static_cast<std::size_t>(index)];
}

// --- Vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 2 || words_[0] != "<pad>" || words_[1] != "<eos>") {
    throw ConfigError("vocabulary must start with <pad>, <eos>");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw EncodingError("token '" + word + "' is not in the vocabulary");
  }
  return it->second;
}

bool Vocabulary::contains(const std::string& word) const { return index_.count(word) != 0; }

Tokens Vocabulary::encode(const std::string& text) const {
  Tokens out;
  for (const auto& w : split_ws(text)) {
    out.push_back(id(w));
  }
  return out;
}

std::string Vocabulary::decode(const Tokens& tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t == pad_id) {
      continue;
    }
    if (!out.empty()) {
      out += ' ';
    }
    out += word(t);
  }
  return out;
}

std::vector<std::string> domain_names(int n) {
  if (n < 1 || n > static_cast<int>(kDomainWords.size())) {
    throw ConfigError("number of domains must be in [1, " + std::to_string(kDomainWords.size()) +
                      "], got " + std::to_string(n));
  }
  return {kDomainWords.begin(), kDomainWords.begin() + n};
}

std::vector<std::string> SyntheticSpec::default_operands(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(std::to_string(i));
  }
  return out;
}

Vocabulary make_vocabulary(int n_domains, const std::vector<std::string>& operands) {
  std::vector<std::string> words = {"<pad>", "<eos>", "Q:", "?", "Answer:", "Example:",
                                    "because", "is", "so"};
  for (auto* w : kChoiceLabels) words.emplace_back(w);
  for (auto* w : kLetters) words.emplace_back(w);
  for (auto* w : kValueWords) words.emplace_back(w);
  for (const auto& d : domain_names(n_domains)) words.push_back(d);
  std::set<std::string> reserved(words.begin(), words.end());
  for (const auto& op : operands) {
    if (op.empty() || op.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("operand symbol '" + op + "' is not a single token");
    }
    if (reserved.count(op)) {
      throw ConfigError("operand symbol '" + op + "' collides with a reserved word");
    }
    reserved.insert(op);
    words.push_back(op);
  }
  return Vocabulary(std::move(words));
}

// --- JSONL -------------------------------------------------------------------

namespace {

McqSample sample_from_json(const json& j) {
  if (!j.is_object()) {
    throw ParseError("record is not a JSON object");
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "question" && key != "choices" && key != "answer" &&
        key != "rationale") {
      throw ParseError("unknown field '" + key + "'");
    }
  }
  McqSample s;
  if (!j.contains("id") || !j["id"].is_string()) throw ParseError("missing string field 'id'");
  if (!j.contains("question") || !j["question"].is_string())
    throw ParseError("missing string field 'question'");
  if (!j.contains("choices") || !j["choices"].is_array())
    throw ParseError("missing array field 'choices'");
  s.id = j["id"].get<std::string>();
  s.question = j["question"].get<std::string>();
  const auto& ch = j["choices"];
  if (ch.size() != kNumChoices) {
    throw ValidationError("sample '" + s.id + "' has " + std::to_string(ch.size()) +
                          " choices, expected 4");
  }
  for (std::size_t i = 0; i < kNumChoices; ++i) {
    if (!ch[i].is_string()) throw ParseError("choice " + std::to_string(i) + " is not a string");
    s.choices[i] = ch[i].get<std::string>();
  }
  if (j.contains("answer") && !j["answer"].is_null()) {
    if (!j["answer"].is_number_integer()) throw ParseError("'answer' is not an integer");
    const int a = j["answer"].get<int>();
    if (a < 0 || a >= kNumChoices) {
      throw ValidationError("sample '" + s.id + "' answer " + std::to_string(a) +
                            " outside [0,3]");
    }
    s.answer = a;
  }
  if (j.contains("rationale") && !j["rationale"].is_null()) {
    if (!j["rationale"].is_string()) throw ParseError("'rationale' is not a string");
    s.rationale = j["rationale"].get<std::string>();
  }
  return s;
}

}  // namespace

void validate_samples(const std::vector<McqSample>& samples, DatasetKind kind) {
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) {
      throw ValidationError("duplicate sample id '" + s.id + "'");
    }
    if (kind == DatasetKind::pool && s.answer) {
      throw ValidationError("pool sample '" + s.id + "' carries an answer");
    }
    if (kind == DatasetKind::local && !s.answer) {
      throw ValidationError("local sample '" + s.id + "' has no answer");
    }
    if (s.answer && (*s.answer < 0 || *s.answer >= kNumChoices)) {
      throw ValidationError("sample '" + s.id + "' answer outside [0,3]");
    }
  }
}

void check_disjoint_ids(const DistillationPool& pool, const std::vector<LocalDataset>& locals) {
  std::unordered_set<std::string> pool_ids;
  for (const auto& s : pool.samples) pool_ids.insert(s.id);
  for (const auto& d : locals) {
    for (const auto& s : d.samples) {
      if (pool_ids.count(s.id)) {
        throw ValidationError("id '" + s.id + "' appears in both the pool and client " +
                              std::to_string(d.owner));
      }
    }
  }
}

std::vector<McqSample> load_samples(const std::filesystem::path& path, DatasetKind kind) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open dataset file " + path.string());
  }
  std::vector<McqSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  try {
    validate_samples(out, kind);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return out;
}

LocalDataset load_local_dataset(const std::filesystem::path& path, int owner) {
  return LocalDataset{owner, load_samples(path, DatasetKind::local)};
}

DistillationPool load_pool(const std::filesystem::path& path) {
  return DistillationPool{load_samples(path, DatasetKind::pool)};
}

std::string to_jsonl_line(const McqSample& s) {
  json j;
  j["id"] = s.id;
  j["question"] = s.question;
  j["choices"] = s.choices;
  if (s.answer) j["answer"] = *s.answer;
  if (s.rationale) j["rationale"] = *s.rationale;
  return j.dump();
}

void save_samples(const std::filesystem::path& path, const std::vector<McqSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write dataset file " + path.string());
  }
  for (const auto& s : samples) {
    out << to_jsonl_line(s) << '\n';
  }
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

// --- synthetic ---------------------------------------------------------------

namespace {

struct Fact {
  int a;
  int b;
};

class FactTables {
 public:
  FactTables(int domains, int n_ops, std::mt19937_64& rng) : by_class_(domains) {
    for (int d = 0; d < domains; ++d) {
      std::vector<Fact> pairs;
      for (int a = 0; a < n_ops; ++a)
        for (int b = 0; b < n_ops; ++b) pairs.push_back({a, b});
      std::shuffle(pairs.begin(), pairs.end(), rng);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        by_class_[d][i % kNumChoices].push_back(pairs[i]);
      }
    }
  }

  Fact draw(int domain, int cls, std::mt19937_64& rng) const {
    const auto& facts = by_class_[domain][cls];
    return facts[uniform_index(rng, facts.size())];
  }

 private:
  std::vector<std::array<std::vector<Fact>, kNumChoices>> by_class_;
};

McqSample make_sample(std::string id, const std::string& domain, const Fact& f, int cls,
                      const std::vector<std::string>& ops) {
  McqSample s;
  s.id = std::move(id);
  s.question = domain + " " + ops[f.a] + " " + ops[f.b];
  for (int i = 0; i < kNumChoices; ++i) s.choices[i] = kValueWords[i];
  s.answer = cls;
  return s;
}

// Balanced classes: the i-th sample of a set gets class i mod 4, then the set
// is shuffled.
std::vector<McqSample> draw_set(const std::string& prefix, int n, const FactTables& facts,
                                const std::vector<std::string>& domains,
                                const std::vector<std::string>& ops, std::mt19937_64& rng,
                                const std::function<int(int)>& pick_domain) {
  std::vector<McqSample> out;
  out.reserve(n);
  const int offset = static_cast<int>(uniform_index(rng, kNumChoices));
  for (int i = 0; i < n; ++i) {
    const int cls = (i + offset) % kNumChoices;
    const int d = pick_domain(i);
    out.push_back(make_sample("", domains[d], facts.draw(d, cls, rng), cls, ops));
  }
  std::shuffle(out.begin(), out.end(), rng);
  for (int i = 0; i < n; ++i) out[i].id = prefix + std::to_string(i);
  return out;
}

}  // namespace

SyntheticData generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec) {
  if (spec.clients < 1) throw ConfigError("clients must be >= 1");
  if (spec.n_local_per_client < 1 || spec.n_pool < 1 || spec.n_test_per_client < 1) {
    throw ConfigError("dataset counts must be >= 1");
  }
  if (spec.n_server_pretrain < 0) throw ConfigError("n_server_pretrain must be >= 0");
  if (spec.own_domain_fraction < 0 || spec.own_domain_fraction > 1) {
    throw ConfigError("own_domain_fraction must be in [0,1]");
  }
  const int n_ops = static_cast<int>(spec.operands.size());
  if (n_ops * n_ops < kNumChoices) {
    throw ConfigError("operand vocabulary too small: need at least 2 symbols to encode " +
                      std::to_string(kNumChoices) + " distinct answers per domain");
  }
  // Fails on reserved-word collisions and bad domain counts.
  const Vocabulary vocab = make_vocabulary(spec.clients, spec.operands);
  (void)vocab;

  std::mt19937_64 rng(seed);
  const auto domains = domain_names(spec.clients);
  const FactTables facts(spec.clients, n_ops, rng);
  const int K = spec.clients;

  SyntheticData out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < K; ++k) {
    auto pick = [&](int) {
      if (K == 1 || unit(rng) < spec.own_domain_fraction) return k;
      const int other = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K - 1)));
      return other >= k ? other + 1 : other;
    };
    out.locals.push_back(LocalDataset{
        k, draw_set("c" + std::to_string(k) + "-l", spec.n_local_per_client, facts, domains,
                    spec.operands, rng, pick)});
  }
  for (int k = 0; k < K; ++k) {
    out.tests.push_back(LocalDataset{
        k, draw_set("c" + std::to_string(k) + "-t", spec.n_test_per_client, facts, domains,
                    spec.operands, rng, [k](int) { return k; })});
  }
  out.server_corpus = LocalDataset{
      -1, draw_set("s-", spec.n_server_pretrain, facts, domains, spec.operands, rng,
                   [K](int i) { return i % K; })};
  out.pool.samples = draw_set("p-", spec.n_pool, facts, domains, spec.operands, rng,
                              [K](int i) { return i % K; });
  for (auto& s : out.pool.samples) s.answer.reset();

  const int cls = static_cast<int>(uniform_index(rng, kNumChoices));
  out.demo = make_sample("demo", domains[0], facts.draw(0, cls, rng), cls, spec.operands);
  out.demo.rationale = "because " + out.demo.question + " is " + kValueWords[cls] + " so";
  return out;
}

// --- prompts -----------------------------------------------------------------

namespace {

std::string query_block(const McqSample& s) {
  std::string out = "Q: " + s.question + " ?";
  for (int i = 0; i < kNumChoices; ++i) {
    out += std::string(" ") + kChoiceLabels[i] + " " + s.choices[i];
  }
  out += " Answer:";
  return out;
}

}  // namespace

std::string format_prompt_text(const McqSample& sample, PromptMode mode, const McqSample* demo) {
  if (mode == PromptMode::zero_shot) {
    return query_block(sample);
  }
  if (demo == nullptr || !demo->rationale || demo->rationale->empty() || !demo->answer) {
    throw ValidationError("one_shot prompts need a demonstration with rationale and answer");
  }
  return "Example: " + query_block(*demo) + " " + *demo->rationale + " " +
         answer_letter(*demo->answer) + " " + query_block(sample);
}

Tokens format_prompt(const McqSample& sample, PromptMode mode, const McqSample* demo,
                     const Vocabulary& vocab) {
  return vocab.encode(format_prompt_text(sample, mode, demo));
}

Tokens answer_response(const McqSample& sample, const Vocabulary& vocab) {
  if (!sample.answer) {
    throw ValidationError("sample '" + sample.id + "' has no answer");
  }
  return {vocab.id(answer_letter(*sample.answer)), Vocabulary::eos_id};
}

// --- features ----------------------------------------------------------------

FeatureVector featurize(const McqSample& sample, int d) {
  if (d < 8) {
    throw ConfigError("feature dimension must be >= 8");
  }
  const std::size_t buckets = static_cast<std::size_t>(d - 2);
  FeatureVector f;
  f.values.assign(static_cast<std::size_t>(d), 0.0);

  std::size_t n_tokens = 0;
  auto add_tokens = [&](const std::string& text) {
    for (const auto& w : split_ws(text)) {
      f.values[fnv1a64(w) % buckets] += 1.0;
      ++n_tokens;
    }
  };
  add_tokens(sample.question);
  for (const auto& c : sample.choices) add_tokens(c);

  double sq = 0.0;
  for (std::size_t i = 0; i < buckets; ++i) sq += f.values[i] * f.values[i];
  if (sq > 0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t i = 0; i < buckets; ++i) f.values[i] *= inv;
  }

  const double n = static_cast<double>(n_tokens);
  f.values[buckets] = n / (n + 16.0);

  double mean = 0.0;
  for (const auto& c : sample.choices) mean += static_cast<double>(c.size());
  mean /= kNumChoices;
  double var = 0.0;
  for (const auto& c : sample.choices) {
    const double dlt = static_cast<double>(c.size()) - mean;
    var += dlt * dlt;
  }
  var /= kNumChoices;
  f.values[buckets + 1] = var / (1.0 + var);

  double norm2 = 0.0;
  for (double v : f.values) norm2 += v * v;
  f.norm = std::sqrt(norm2);
  return f;
}

}  // namespace fedr
