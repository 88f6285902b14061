#include <cmath>
#include <random>

#include "doctest.h"
#include "fedr/distill.hpp"
#include "helpers.hpp"
#include "oracle_policy.hpp"

using namespace fedr;
using fedr::testing::fd_check;
using fedr::testing::oracle_log_prob;

namespace {

PolicyShape shape() {
  PolicyShape s;
  s.vocab_size = 8;
  s.context_len = 16;
  s.embed_dim = 3;
  s.window = 3;
  s.hidden = 5;
  return s;
}

ReasoningTriple make_triple(std::mt19937_64& rng, const std::string& id) {
  std::uniform_int_distribution<TokenId> u(2, 7);
  ReasoningTriple t;
  t.sample_id = id;
  t.prompt = {u(rng), u(rng), u(rng)};
  t.client_response = {u(rng), Vocabulary::eos_id};
  t.server_response = {u(rng), u(rng), Vocabulary::eos_id};
  return t;
}

// Client prefers the server response; long-double oracle from log-probabilities.
double oracle_client_loss(const ReasoningTriple& t, const TokenPolicy& pi, const TokenPolicy& ref,
                          double beta) {
  const long double m = (oracle_log_prob(pi, t.prompt, t.server_response) -
                         oracle_log_prob(ref, t.prompt, t.server_response)) -
                        (oracle_log_prob(pi, t.prompt, t.client_response) -
                         oracle_log_prob(ref, t.prompt, t.client_response));
  return static_cast<double>(std::log1p(std::exp(-beta * m)));
}

TokenPolicy perturbed(const TokenPolicy& base, std::uint64_t seed, double scale) {
  TokenPolicy p = base;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  for (double& x : p.mutable_params()) x += n(rng);
  return p;
}

}  // namespace

TEST_SUITE("distill") {
  TEST_CASE("preference loss values") {
    CHECK(preference_loss(1.0, 0.1) == doctest::Approx(0.6443967).epsilon(1e-6));
    CHECK(preference_loss(0.0, 0.1) == doctest::Approx(std::log(2.0)));
    CHECK(preference_loss(123.0, 0.0) == doctest::Approx(std::log(2.0)));
    CHECK(std::isfinite(preference_loss(-1e5, 1.0)));
    CHECK(preference_loss(-1e5, 1.0) == doctest::Approx(1e5));
  }

  TEST_CASE("loss at the reference is log 2") {
    std::mt19937_64 rng(1);
    const TokenPolicy pol(shape(), "client", 3, 0.8);
    const ReferenceSnapshot ref(pol, 1);
    const auto t = make_triple(rng, "s0");
    CHECK(client_loss(t, pol, ref, {0.1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto b = server_pair_batch_loss({t}, pol, ref, {0.1});
    CHECK(b.mean == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("client and server losses match the oracle") {
    std::mt19937_64 rng(2);
    const TokenPolicy base(shape(), "client", 11, 0.8);
    const ReferenceSnapshot ref(base, 1);
    for (int i = 0; i < 5; ++i) {
      const TokenPolicy pol = perturbed(base, 50 + i, 0.3);
      const auto t = make_triple(rng, "s" + std::to_string(i));
      CHECK(client_loss(t, pol, ref, {0.1}) ==
            doctest::Approx(oracle_client_loss(t, pol, base, 0.1)).epsilon(1e-9));
      CHECK(server_margin(t, pol, ref) == doctest::Approx(-client_margin(t, pol, ref)));
    }
  }

  TEST_CASE("client gradient matches central differences") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 5; ++i) {
      const TokenPolicy base(shape(), "client", 20 + i, 0.8);
      const ReferenceSnapshot ref(base, 1);
      TokenPolicy pol = perturbed(base, 90 + i, 0.3);
      const auto t = make_triple(rng, "s");
      const DistillConfig cfg{1.0};
      const Vec g = client_loss_grad(t, pol, ref, cfg);
      const double err = fd_check(pol.mutable_params(), g,
                                  [&] { return client_loss(t, pol, ref, cfg); }, 20, 7 + i);
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("overlap partition weights") {
    const auto part = overlap_partition({{0, {"a", "b"}}, {1, {"b", "c"}}, {2, {"b"}}});
    CHECK(part.disjoint.size() == 2);
    CHECK(part.disjoint.at("a") == 0);
    CHECK(part.disjoint.at("c") == 1);
    REQUIRE(part.overlapping.count("b") == 1);
    CHECK(part.overlapping.at("b") == std::vector<int>{0, 1, 2});
    CHECK(part.weights.at({"b", 1}) == doctest::Approx(1.0 / 3));
    CHECK(part.weights.at({"a", 0}) == 1.0);
  }

  TEST_CASE("overlap weights sum to one per sample") {
    std::mt19937_64 rng(13);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 30; ++trial) {
      std::map<int, std::set<std::string>> sel;
      for (int k = 0; k < 4; ++k)
        for (int s = 0; s < 10; ++s)
          if (coin(rng)) sel[k].insert("id" + std::to_string(s));
      const auto part = overlap_partition(sel);
      std::map<std::string, double> sums;
      for (const auto& [key, w] : part.weights) sums[key.first] += w;
      for (const auto& [id, s] : sums) CHECK(s == doctest::Approx(1.0));
      for (const auto& [id, ks] : part.overlapping) CHECK(part.disjoint.count(id) == 0);
    }
  }

  TEST_CASE("server loss: weighted terms over distinct samples, gradient matches") {
    std::mt19937_64 rng(6);
    const TokenPolicy base(shape(), "server", 31, 0.8);
    const ReferenceSnapshot ref(base, 0);
    TokenPolicy pol = perturbed(base, 32, 0.3);
    const auto part = overlap_partition({{0, {"a", "b"}}, {1, {"b"}}});
    TripleMap tm;
    for (auto key : {std::pair<std::string, int>{"a", 0}, {"b", 0}, {"b", 1}})
      tm[key] = make_triple(rng, key.first);
    const DistillConfig cfg{0.5};
    // Oracle: server prefers the client response.
    auto term = [&](const ReasoningTriple& t) {
      const double m = (oracle_log_prob(pol, t.prompt, t.client_response) -
                        oracle_log_prob(base, t.prompt, t.client_response)) -
                       (oracle_log_prob(pol, t.prompt, t.server_response) -
                        oracle_log_prob(base, t.prompt, t.server_response));
      return std::log1p(std::exp(-cfg.beta * m));
    };
    const double expect =
        (term(tm[{"a", 0}]) + 0.5 * term(tm[{"b", 0}]) + 0.5 * term(tm[{"b", 1}])) / 2.0;
    CHECK(server_loss(tm, part, pol, ref, cfg) == doctest::Approx(expect).epsilon(1e-9));

    const Vec g = server_loss_grad(tm, part, pol, ref, cfg);
    const double err = fd_check(pol.mutable_params(), g,
                                [&] { return server_loss(tm, part, pol, ref, cfg); }, 20, 3);
    CHECK(err < 1e-4);
  }

  TEST_CASE("errors") {
    std::mt19937_64 rng(8);
    const TokenPolicy pol(shape(), "client", 1);
    const ReferenceSnapshot ref(pol, 1);
    auto t = make_triple(rng, "x");
    t.client_response.clear();
    CHECK_THROWS_AS(client_loss(t, pol, ref, {}), ValidationError);
    PolicyShape other = shape();
    other.hidden = 7;
    const ReferenceSnapshot wrong(TokenPolicy(other, "server", 2), 0);
    const auto ok = make_triple(rng, "y");
    CHECK_THROWS_AS(client_loss(ok, pol, wrong, {}), ShapeError);
    const auto part = overlap_partition({{0, {"missing"}}});
    CHECK_THROWS_AS(server_loss({}, part, pol, ref, {}), ValidationError);
  }

  TEST_CASE("a gradient step lowers the batch loss") {
    std::mt19937_64 rng(10);
    const TokenPolicy base(shape(), "client", 17, 0.8);
    const ReferenceSnapshot ref(base, 1);
    TokenPolicy pol = base;
    std::vector<ReasoningTriple> ts;
    for (int i = 0; i < 6; ++i) ts.push_back(make_triple(rng, std::to_string(i)));
    const auto b0 = client_batch_loss(ts, pol, ref, {0.1}, true);
    apply_update(pol, b0.grad, 0.5);
    const auto b1 = client_batch_loss(ts, pol, ref, {0.1}, false);
    CHECK(b1.mean < b0.mean);
    CHECK(b0.per_sample.size() == 6);
  }
}
