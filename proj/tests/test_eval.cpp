#include "doctest.h"
#include "fed_fixture.hpp"
#include "fedr/eval.hpp"
#include "fedr/federation.hpp"

using namespace fedr;

namespace {

// Output head biased so greedy decoding always emits `word`.
TokenPolicy always_emits(const PolicyShape& s, TokenId word) {
  auto p = TokenPolicy::zeros(s, "fixed");
  const ParamLayout L(s);
  p.mutable_params()[L.b2 + static_cast<std::size_t>(word)] = 50.0;
  return p;
}

std::vector<McqSample> answered(int n, bool balanced) {
  std::vector<McqSample> out;
  for (int i = 0; i < n; ++i) {
    McqSample s;
    s.id = "t" + std::to_string(i);
    const auto ops = SyntheticSpec::default_operands(6);
    s.question = domain_names(1)[0] + " " + ops[1] + " " + ops[2];
    s.choices = {"v0", "v1", "v2", "v3"};
    s.answer = balanced ? i % 4 : 0;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("answer extraction") {
    CHECK(extract_answer("The answer is B") == 1);
    CHECK_FALSE(extract_answer("bcd").has_value());
    CHECK(extract_answer("A. no wait D") == 0);
    CHECK(extract_answer("(c)") == 2);
    CHECK(extract_answer("d") == 3);
    CHECK_FALSE(extract_answer("").has_value());
    CHECK_FALSE(extract_answer("E F 1A").has_value());
    CHECK(extract_answer("because x is v2 so C") == 2);
  }

  TEST_CASE("fixed-output policy accuracy") {
    const Vocabulary vocab = make_vocabulary(1, SyntheticSpec::default_operands(6));
    PolicyShape s;
    s.vocab_size = static_cast<int>(vocab.size());
    s.hidden = 4;
    const auto pol = always_emits(s, vocab.id("A"));
    const DecodeConfig dc;
    const auto all_a = evaluate(pol, answered(20, false), PromptMode::zero_shot, dc, vocab, nullptr);
    CHECK(all_a.accuracy == 1.0);
    const auto bal = evaluate(pol, answered(100, true), PromptMode::zero_shot, dc, vocab, nullptr);
    CHECK(bal.accuracy == 0.25);
    CHECK(bal.correct == 25);
    CHECK(bal.n == 100);

    // Unextractable output scores zero instead of failing.
    const auto eos = always_emits(s, vocab.id("v1"));
    CHECK(evaluate(eos, answered(8, true), PromptMode::zero_shot, dc, vocab, nullptr).accuracy == 0.0);

    auto unlabeled = answered(2, true);
    unlabeled[1].answer.reset();
    CHECK_THROWS_AS(evaluate(pol, unlabeled, PromptMode::zero_shot, dc, vocab, nullptr),
                    ValidationError);
  }

  TEST_CASE("random policies do not beat chance") {
    // Unextractable output scores zero, so only the upper side is a property.
    const auto data = from_synthetic(generate_synthetic(1, SyntheticSpec{}));
    const Vocabulary vocab = build_vocabulary(data);
    PolicyShape s;
    s.vocab_size = static_cast<int>(vocab.size());
    s.hidden = 16;
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const TokenPolicy pol(s, "client", seed);
      const auto r = evaluate(pol, data.tests[0].samples, PromptMode::zero_shot, {}, vocab, nullptr);
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 0.45);
      total += r.accuracy;
    }
    CHECK(total / 5 <= 0.35);
  }

  TEST_CASE("own-domain accuracy beats out-of-domain after local training") {
    auto cfg = testing::small_config(3, 1);
    cfg.client_model.sft_epochs = 60;
    cfg.client_model.hidden = 16;
    auto spec = testing::small_spec(3);
    spec.n_local_per_client = 48;
    spec.n_test_per_client = 48;
    const Federation fed(cfg, from_synthetic(generate_synthetic(5, spec)));
    const auto st = initialize(fed);
    double own = 0, other = 0;
    for (int k = 0; k < 3; ++k) {
      for (int j = 0; j < 3; ++j) {
        const auto r = evaluate(st.clients[k].policy, fed.data.tests[j].samples, PromptMode::zero_shot,
                                cfg.decode, fed.vocab, nullptr);
        (k == j ? own : other) += r.accuracy / (k == j ? 3.0 : 6.0);
      }
    }
    CHECK(own > other);
  }
}
