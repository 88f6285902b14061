#include <cmath>
#include <random>

#include "doctest.h"
#include "fedr/policy.hpp"
#include "helpers.hpp"
#include "oracle_policy.hpp"

using namespace fedr;
using fedr::testing::fd_check;

namespace {

PolicyShape small_shape(int vocab = 9, int hidden = 6) {
  PolicyShape s;
  s.vocab_size = vocab;
  s.context_len = 24;
  s.embed_dim = 4;
  s.window = 3;
  s.hidden = hidden;
  return s;
}

Tokens random_tokens(std::mt19937_64& rng, int n, int vocab) {
  std::uniform_int_distribution<TokenId> u(2, vocab - 1);
  Tokens t(static_cast<std::size_t>(n));
  for (auto& x : t) x = u(rng);
  return t;
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("zero-parameter head is uniform") {
    PolicyShape s = small_shape(4);
    const auto pol = TokenPolicy::zeros(s, "client");
    CHECK(log_prob(pol, {2, 3}, {2, 3}) == doctest::Approx(-2.772589).epsilon(1e-6));
    CHECK(log_prob(pol, {2, 3}, {}) == 0.0);
    const Vec d = next_token_distribution(pol, {2});
    for (double x : d) CHECK(x == doctest::Approx(0.25));
  }

  TEST_CASE("log_prob matches the straight-line oracle") {
    std::mt19937_64 rng(3);
    for (int inst = 0; inst < 5; ++inst) {
      const TokenPolicy pol(small_shape(), "client", 100 + inst, 0.8);
      const Tokens prompt = random_tokens(rng, 2 + inst, 9);
      const Tokens resp = random_tokens(rng, 3, 9);
      CHECK(log_prob(pol, prompt, resp) ==
            doctest::Approx(testing::oracle_log_prob(pol, prompt, resp)).epsilon(1e-10));
    }
  }

  TEST_CASE("pads in the prompt are ignored") {
    const TokenPolicy pol(small_shape(), "client", 7, 0.8);
    CHECK(log_prob(pol, {0, 0, 3, 4}, {5, 1}) == doctest::Approx(log_prob(pol, {3, 4}, {5, 1})));
  }

  TEST_CASE("grad_log_prob matches central differences") {
    std::mt19937_64 rng(21);
    for (int inst = 0; inst < 5; ++inst) {
      TokenPolicy pol(small_shape(), "client", 40 + inst, 0.8);
      const Tokens prompt = random_tokens(rng, 4, 9);
      const Tokens resp = random_tokens(rng, 3, 9);
      const Vec g = grad_log_prob(pol, prompt, resp);
      Vec& params = pol.mutable_params();
      const double err =
          fd_check(params, g, [&] { return log_prob(pol, prompt, resp); }, 20, 500 + inst);
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("reference snapshot stays frozen when the source moves") {
    TokenPolicy pol(small_shape(), "client", 1, 0.8);
    const ReferenceSnapshot ref(pol, 3);
    const double before = log_prob(ref, {2, 3}, {4, 1});
    Vec g(pol.num_params(), 1.0);
    apply_update(pol, g, 0.1);
    CHECK(log_prob(ref, {2, 3}, {4, 1}) == before);
    CHECK(log_prob(pol, {2, 3}, {4, 1}) != before);
    CHECK(ref.frozen_round() == 3);
  }

  TEST_CASE("apply_update with zero lr is a no-op") {
    TokenPolicy pol(small_shape(), "client", 2, 0.8);
    const Vec before = pol.params();
    apply_update(pol, Vec(pol.num_params(), 5.0), 0.0);
    CHECK(pol.params() == before);
    apply_update(pol, Vec(pol.num_params(), 1.0), 0.5);
    CHECK(pol.params()[0] == doctest::Approx(before[0] - 0.5));
    CHECK_THROWS_AS(apply_update(pol, Vec(3, 1.0), 0.1), ShapeError);
  }

  TEST_CASE("errors") {
    const TokenPolicy pol(small_shape(), "client", 2);
    CHECK_THROWS_AS(log_prob(pol, {2, 3}, {99}), EncodingError);
    CHECK_THROWS_AS(log_prob(pol, Tokens(20, 2), Tokens(5, 3)), LengthError);
    CHECK_THROWS_AS(TokenPolicy::from_params(small_shape(), "x", Vec(3)), ShapeError);
    PolicyShape bad = small_shape();
    bad.hidden = 0;
    CHECK_THROWS_AS(TokenPolicy(bad, "x", 1), ConfigError);
    DecodeConfig dc;
    dc.mode = DecodeMode::sampled;
    dc.temperature = 0;
    CHECK_THROWS_AS(generate(pol, {2}, dc), ConfigError);
  }

  TEST_CASE("generation is deterministic, never emits pad, stops at eos") {
    const TokenPolicy pol(small_shape(), "client", 8, 1.5);
    DecodeConfig dc{DecodeMode::sampled, 1.0, 6, 77};
    const Tokens a = generate(pol, {2, 3}, dc);
    CHECK(a == generate(pol, {2, 3}, dc));
    CHECK(a.size() <= 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] != Vocabulary::pad_id);
      if (a[i] == Vocabulary::eos_id) CHECK(i + 1 == a.size());
    }
    dc.mode = DecodeMode::greedy;
    const Tokens g = generate(pol, {2, 3}, dc);
    // The greedy first token is the non-pad argmax of the next-token distribution.
    const Vec d = next_token_distribution(pol, {2, 3});
    std::size_t best = 1;
    for (std::size_t v = 1; v < d.size(); ++v)
      if (d[v] > d[best]) best = v;
    CHECK(g.front() == static_cast<TokenId>(best));
  }

  TEST_CASE("next-token distribution sums to one") {
    const TokenPolicy pol(small_shape(), "client", 9, 1.0);
    const Vec d = next_token_distribution(pol, {2, 5, 7});
    double s = 0;
    for (double x : d) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("sft reduces cross-entropy and freezes the final parameters") {
    const Vocabulary vocab = make_vocabulary(1, SyntheticSpec::default_operands(3));
    SyntheticSpec spec;
    spec.clients = 1;
    spec.operands = SyntheticSpec::default_operands(3);
    spec.n_local_per_client = 9;
    spec.n_pool = 1;
    spec.n_test_per_client = 4;
    spec.n_server_pretrain = 0;
    spec.own_domain_fraction = 1.0;
    const SyntheticData d = generate_synthetic(4, spec);
    PolicyShape s;
    s.vocab_size = static_cast<int>(vocab.size());
    s.hidden = 16;
    SftConfig cfg;
    cfg.epochs = 40;
    const TokenPolicy init(s, "client", 5);
    const double ce0 = mean_answer_cross_entropy(init, d.locals[0].samples, PromptMode::zero_shot, vocab);
    const SftResult r = sft(init, d.locals[0].samples, cfg, vocab, nullptr, 1);
    CHECK(r.epoch_losses.size() == 40);
    CHECK(r.epoch_losses.back() < 0.5 * ce0);
    CHECK(r.reference.params() == r.policy.params());
    CHECK(r.reference.frozen_round() == 1);
  }
}
