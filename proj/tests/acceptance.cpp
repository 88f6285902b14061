// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "fedr/baselines.hpp"
#include "fedr/bilevel.hpp"
#include "fedr/config.hpp"
#include "fedr/distill.hpp"
#include "fedr/federation.hpp"
#include "fedr/filter.hpp"
#include "fedr/reward.hpp"
#include "filter_scenarios.hpp"
#include "helpers.hpp"

using namespace fedr;
using fedr::testing::fd_check;

namespace {

// End-to-end margins, in accuracy fractions.
constexpr double kMarginVsStandalone = 0.03;
constexpr double kMarginVsFedKD = 0.01;
constexpr double kRuntimeLimitSeconds = 30 * 60;

// Convergence band for the mean fitted slope, pinned from a calibration run.
constexpr double kSlopeLo = -1.3;
constexpr double kSlopeHi = -0.7;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// --- 1 -------------------------------------------------------------------------

double scalar_drop(const Vec& prev, const Vec& curr) {
  long double a = 0, b = 0;
  for (double x : prev) a += std::exp(static_cast<long double>(std::min(x, 30.0)));
  for (double x : curr) b += std::exp(static_cast<long double>(std::min(x, 30.0)));
  return static_cast<double>((a - b) / std::max(a, b));
}

void criterion_reward_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 16);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec a = testing::random_losses(rng, static_cast<std::size_t>(len(rng)), 0.0, 35.0);
    const Vec b = testing::random_losses(rng, static_cast<std::size_t>(len(rng)), 0.0, 35.0);
    const double rr = round_reward(a, b);
    const double rb = batch_reward(std::span<const double>(a), b);
    worst = std::max({worst, std::abs(rr - scalar_drop(a, b)), std::abs(rb - scalar_drop(a, b))});
    const double alpha = 0.01 * (i % 101);
    const long double s = alpha / (1.0L + std::exp(-static_cast<long double>(rr))) +
                          (1 - alpha) / (1.0L + std::exp(-static_cast<long double>(rb)));
    worst = std::max(worst, std::abs(total_reward(rr, rb, alpha) - static_cast<double>(s)));
  }
  // Worked examples agree with their published values to the printed digits.
  auto near = [](double got, double want) { return std::abs(got - want) < 1e-5; };
  const bool ex1 = round_reward(Vec{0.0}, Vec{std::log(2.0)}) == -0.5;
  const bool ex2 = near(round_reward(Vec{0.5, 0.7}, Vec{0.3, 0.4}), 0.22411);
  const bool ex3 = near(batch_reward(std::span<const double>(Vec{1.0, 1.0}), Vec{0.5, 0.5}), 0.39347);
  const bool ex4 = near(total_reward(0.22411, -0.5, 0.66), 0.49518);
  const bool ok = worst < 1e-9 && ex1 && ex2 && ex3 && ex4;
  report(1, "reward formula oracles", ok,
         fmt("max |err| = %.3g over 100 random lists", worst) +
             (ex1 && ex2 && ex3 && ex4 ? ", worked examples reproduce" : ", worked example mismatch"));
}

// --- 2, 3 ------------------------------------------------------------------------

PolicyShape toy_shape() {
  PolicyShape s;
  s.vocab_size = 10;
  s.context_len = 20;
  s.embed_dim = 4;
  s.window = 3;
  s.hidden = 6;
  return s;
}

ReasoningTriple random_triple(std::mt19937_64& rng, const std::string& id) {
  std::uniform_int_distribution<TokenId> u(2, 9);
  return {id, {u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), 1}, {u(rng), 1}};
}

TokenPolicy jitter(const TokenPolicy& p, std::uint64_t seed, double scale) {
  TokenPolicy out = p;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  for (double& x : out.mutable_params()) x += n(rng);
  return out;
}

void criterion_loss_identities() {
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int i = 0; i < 10; ++i) {
    const TokenPolicy base(toy_shape(), "client", 100 + i, 0.8);
    const ReferenceSnapshot ref(base, 1);
    const TokenPolicy moved = jitter(base, 200 + i, 0.5);
    const auto t = random_triple(rng, "a");
    const auto part = overlap_partition({{0, {"a", "b"}}, {1, {"a"}}});
    TripleMap tm{{{"a", 0}, t}, {{"b", 0}, random_triple(rng, "b")}, {{"a", 1}, random_triple(rng, "a")}};
    for (const auto& [pol, beta] :
         {std::pair<const TokenPolicy*, double>{&base, 0.1}, {&moved, 0.0}}) {
      worst = std::max(worst, std::abs(client_loss(t, *pol, ref, {beta}) - std::log(2.0)));
      worst = std::max(worst, std::abs(server_loss(tm, part, *pol, ref, {beta}) - std::log(2.0)));
    }
  }
  report(2, "loss identities", worst < 1e-9, fmt("max |loss - ln 2| = %.3g", worst));
}

void criterion_gradients() {
  std::mt19937_64 rng(11);
  double worst_client = 0, worst_server = 0, worst_lp = 0, worst_exploit = 0, worst_explore = 0;
  for (int inst = 0; inst < 5; ++inst) {
    const TokenPolicy base(toy_shape(), "client", 300 + inst, 0.8);
    const ReferenceSnapshot ref(base, 1);
    TokenPolicy pol = jitter(base, 400 + inst, 0.3);
    const DistillConfig cfg{0.5};
    const auto t = random_triple(rng, "a");
    const Vec gc = client_loss_grad(t, pol, ref, cfg);
    worst_client = std::max(worst_client, fd_check(pol.mutable_params(), gc,
                                                   [&] { return client_loss(t, pol, ref, cfg); },
                                                   20, 10 + inst));

    const auto part = overlap_partition({{0, {"a", "b"}}, {1, {"a", "c"}}});
    TripleMap tm;
    for (const auto& key : {std::pair<std::string, int>{"a", 0}, {"b", 0}, {"a", 1}, {"c", 1}})
      tm[key] = random_triple(rng, key.first);
    const Vec gs = server_loss_grad(tm, part, pol, ref, cfg);
    worst_server = std::max(worst_server,
                            fd_check(pol.mutable_params(), gs,
                                     [&] { return server_loss(tm, part, pol, ref, cfg); }, 20, 20 + inst));

    const Vec gl = grad_log_prob(pol, t.prompt, t.server_response);
    worst_lp = std::max(worst_lp, fd_check(pol.mutable_params(), gl,
                                           [&] { return log_prob(pol, t.prompt, t.server_response); },
                                           20, 30 + inst));

    FilterConfig fc;
    fc.feature_dim = 8;
    fc.width = 6;
    fc.explore_width = 5;
    FilterState st(fc, "client_0", "server", 50 + inst);
    std::normal_distribution<double> g(0, 1);
    std::vector<Vec> xs, hs;
    for (int i = 0; i < 5; ++i) {
      Vec x(8);
      for (auto& v : x) v = g(rng);
      hs.push_back(st.exploit.forward(x).hidden);
      xs.push_back(std::move(x));
    }
    const Vec targets{0.3, 0.7, 0.1, 0.9, 0.5};
    Vec grad;
    st.exploit.loss_and_grad(xs, targets, &grad);
    worst_exploit = std::max(worst_exploit,
                             fd_check(st.exploit.mutable_params(), grad,
                                      [&] { return st.exploit.loss_and_grad(xs, targets, nullptr); },
                                      20, 40 + inst));
    st.explore.loss_and_grad(hs, targets, &grad);
    worst_explore = std::max(worst_explore,
                             fd_check(st.explore.mutable_params(), grad,
                                      [&] { return st.explore.loss_and_grad(hs, targets, nullptr); },
                                      20, 50 + inst));
  }
  const double worst = std::max({worst_client, worst_server, worst_lp, worst_exploit, worst_explore});
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "max rel err client %.2g, server %.2g, log-prob %.2g, exploit %.2g, explore %.2g",
                worst_client, worst_server, worst_lp, worst_exploit, worst_explore);
  report(3, "gradient correctness", worst < 1e-4, buf);
}

// --- 4, 5 ------------------------------------------------------------------------

void criterion_filter_learning() {
  double min_precision = 1.0;
  bool explores = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto pool = testing::make_linear_pool(256, 64, 0.05, seed);
    const double p = testing::learning_precision(pool, 500, 64, 32, seed);
    min_precision = std::min(min_precision, p);
    const auto greedy = testing::distinct_visited(pool, 0.0, 50, 32, seed);
    const auto bonus = testing::distinct_visited(pool, 0.5, 50, 32, seed);
    explores = explores && bonus > greedy;
    detail += " seed " + std::to_string(seed) + ": distinct " + std::to_string(greedy) + " vs " +
              std::to_string(bonus) + ";";
  }
  report(4, "filter learning", min_precision > 0.9 && explores,
         fmt("min precision@32 = %.3f;", min_precision) + detail);
}

void criterion_selection_contracts() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  SelectionConfig thr;
  thr.min_count = 0;
  bool membership = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredId> est;
    for (int i = 0; i < 32; ++i) {
      // Every tenth vector is quantised so exact 0.5 values occur.
      const double v = trial % 10 == 0 ? std::round(u(rng) * 8) / 8 : u(rng);
      est.emplace_back("s" + std::to_string(i), v);
    }
    const auto chosen = select(thr, est);
    const std::set<std::string> got(chosen.begin(), chosen.end());
    for (const auto& [id, v] : est) membership = membership && ((got.count(id) == 1) == (v > 0.5));
  }

  SelectionConfig top;
  top.mode = SelectionMode::top_k;
  top.top_k = 2;
  const bool ties = select(top, {{"c", 0.1}, {"b", 0.9}, {"a", 0.9}}) ==
                        std::vector<std::string>{"a", "b"} &&
                    select(top, {{"z", 0.5}, {"y", 0.5}, {"x", 0.5}}) ==
                        std::vector<std::string>{"x", "y"};

  FilterConfig fc;
  fc.lambda = 0.0;
  FilterState st(fc, "client_0", "server", 9);
  bool bitwise = true;
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 100; ++i) {
    FeatureVector f;
    f.values.resize(64);
    for (auto& v : f.values) v = g(rng);
    bitwise = bitwise && estimate(st, f) == exploit_forward(st, f).prediction;
  }
  report(5, "selection contracts", membership && ties && bitwise,
         std::string("threshold predicate ") + (membership ? "exact" : "violated") +
             " on 1000 vectors, top-K ties " + (ties ? "by id" : "wrong") + ", lambda=0 " +
             (bitwise ? "bit-identical" : "differs"));
}

// --- 6, 7, 8 ---------------------------------------------------------------------

FederationConfig reference_config() {
  return load_config(std::string(FEDR_CONFIG_DIR) + "/reference.json");
}

double mean_client_zero_shot(const std::vector<MetricsRow>& rows, int round) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.round == round && r.model != kServerName && r.mode == PromptMode::zero_shot) {
      sum += r.accuracy;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

double server_zero_shot(const std::vector<MetricsRow>& rows, int round) {
  for (const auto& r : rows)
    if (r.round == round && r.model == kServerName && r.mode == PromptMode::zero_shot) return r.accuracy;
  return 0.0;
}

void criterion_end_to_end(RunResult& seed1_run, RoundState& seed1_initial) {
  const auto start = std::chrono::steady_clock::now();
  double la = 0, sa = 0, kd = 0, sv = 0, sv0 = 0;
  const int seeds = 3;
  for (int s = 1; s <= seeds; ++s) {
    FederationConfig cfg = reference_config();
    cfg.seed = static_cast<std::uint64_t>(s);
    const Federation fed(cfg, from_synthetic(generate_synthetic(cfg.seed, SyntheticSpec{})));
    auto r = run(fed);
    const auto standalone = run_standalone(fed);
    const auto fedkd = run_fedkd(fed);
    la += mean_client_zero_shot(r.metrics, cfg.rounds) / seeds;
    sv += server_zero_shot(r.metrics, cfg.rounds) / seeds;
    sa += mean_client_zero_shot(standalone.metrics, 0) / seeds;
    sv0 += server_zero_shot(standalone.metrics, 0) / seeds;
    kd += mean_client_zero_shot(fedkd.metrics, 1) / seeds;
    if (s == 1) {
      seed1_initial = initialize(fed);
      seed1_run = std::move(r);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = la - sa >= kMarginVsStandalone && la - kd >= kMarginVsFedKD && sv >= sv0 &&
                  secs < kRuntimeLimitSeconds;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "client zero-shot LaDa %.4f, Standalone %.4f (%+.4f, need >= %.2f), FedKD %.4f "
                "(%+.4f, need >= %.2f); server %.4f vs pretrained %.4f; %.0f s",
                la, sa, la - sa, kMarginVsStandalone, kd, la - kd, kMarginVsFedKD, sv, sv0, secs);
  report(6, "end-to-end toy federation", ok, buf);
}

void criterion_determinism() {
  FederationConfig cfg = reference_config();
  cfg.seed = 2;
  const auto data = from_synthetic(generate_synthetic(cfg.seed, SyntheticSpec{}));
  const auto a = run(Federation(cfg, data));
  const auto b = run(Federation(cfg, data));
  auto log_text = [](const MessageLog& log) {
    std::string s;
    for (const auto& m : log.records) s += message_to_jsonl(m) + "\n";
    return s;
  };
  const bool same = metrics_to_csv(a.metrics) == metrics_to_csv(b.metrics) &&
                    log_text(a.state.log) == log_text(b.state.log);
  std::size_t bytes = 0;
  for (const auto& m : a.state.log.records) bytes += m.payload.size() + kEnvelopeBytes;
  const double mb = static_cast<double>(bytes) / (1024.0 * 1024.0);
  const bool accounted = bytes == a.state.log.total_bytes() && a.metrics.back().cum_mb == mb;
  report(7, "determinism and accounting", same && accounted,
         std::string(same ? "identical CSV and message log" : "outputs differ") + ", " +
             std::to_string(bytes) + " payload bytes " + (accounted ? "match" : "do not match") +
             " reported cumulative MB");
}

void criterion_invariants(const RunResult& r, const RoundState& initial) {
  std::string detail = "reference freeze, provenance and parameter-free log hold over T=" +
                       std::to_string(r.state.round);
  bool ok = r.state.round == 5;
  try {
    check_reference_freeze(initial, r.state);
    check_provenance(r.state);
    check_no_parameters_in_log(r.state);
  } catch (const Error& e) {
    ok = false;
    detail = e.what();
  }
  report(8, "reference freeze and provenance", ok, detail);
}

// --- 9 ---------------------------------------------------------------------------

void criterion_convergence() {
  const auto toy = BilevelToy::make(8, 8, 0.1, 2024);
  double mean_slope = 0;
  bool all_ok = true;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    ConvergenceConfig cfg;
    cfg.rounds = 4096;
    cfg.seed = s;
    try {
      mean_slope += bilevel_convergence_check(toy, cfg).slope / 10;
    } catch (const Error&) {
      all_ok = false;
    }
  }
  ConvergenceConfig still;
  still.rounds = 4096;
  still.start_at_optimum = true;
  const auto r = bilevel_convergence_check(BilevelToy::make(8, 8, 0.0, 2024), still);
  double max_norm = 0;
  for (double g : r.grad_norm_sq) max_norm = std::max(max_norm, std::sqrt(g));
  const bool ok = all_ok && mean_slope >= kSlopeLo && mean_slope <= kSlopeHi && max_norm < 1e-8;
  char buf[200];
  std::snprintf(buf, sizeof buf, "10-seed mean slope %.3f in [%.2f, %.2f]; max norm at optimum %.2g",
                mean_slope, kSlopeLo, kSlopeHi, max_norm);
  report(9, "convergence surrogate", ok, buf);
}

}  // namespace

int main() {
  try {
    criterion_reward_oracles();
    criterion_loss_identities();
    criterion_gradients();
    criterion_filter_learning();
    criterion_selection_contracts();
    RunResult seed1;
    RoundState initial;
    criterion_end_to_end(seed1, initial);
    criterion_determinism();
    criterion_invariants(seed1, initial);
    criterion_convergence();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
