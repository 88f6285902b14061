// Serial reference kernels against their OpenMP versions on federation-sized
// workloads (server-width policy, a pool-sized batch).

#include <benchmark/benchmark.h>

#include <random>

#include "fedr/filter.hpp"
#include "fedr/kernels.hpp"

using namespace fedr;

namespace {

PolicyShape server_shape() {
  PolicyShape s;
  s.vocab_size = 48;
  s.hidden = 64;
  return s;
}

std::vector<SequencePair> workload(std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<TokenId> tok(2, 47);
  std::vector<SequencePair> out(n);
  for (auto& p : out) {
    for (int i = 0; i < 18; ++i) p.prompt.push_back(tok(rng));
    p.response = {tok(rng), Vocabulary::eos_id};
  }
  return out;
}

template <bool Parallel>
void BM_LogProbs(benchmark::State& st) {
  const TokenPolicy pol(server_shape(), "server", 1);
  const auto pairs = workload(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    benchmark::DoNotOptimize(Parallel ? batch_log_probs(pol, pairs) : batch_log_probs_serial(pol, pairs));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <bool Parallel>
void BM_GradSum(benchmark::State& st) {
  const TokenPolicy pol(server_shape(), "server", 1);
  const auto pairs = workload(static_cast<std::size_t>(st.range(0)));
  const Vec w(pairs.size(), 0.01);
  for (auto _ : st) {
    benchmark::DoNotOptimize(Parallel ? weighted_grad_sum(pol, pairs, w)
                                      : weighted_grad_sum_serial(pol, pairs, w));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <bool Parallel>
void BM_Generate(benchmark::State& st) {
  const TokenPolicy pol(server_shape(), "server", 1);
  std::vector<Tokens> prompts;
  for (auto& p : workload(static_cast<std::size_t>(st.range(0)))) prompts.push_back(p.prompt);
  const DecodeConfig dc;
  for (auto _ : st) {
    benchmark::DoNotOptimize(Parallel ? batch_generate(pol, prompts, dc)
                                      : batch_generate_serial(pol, prompts, dc));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <bool Parallel>
void BM_Estimate(benchmark::State& st) {
  FilterConfig cfg;
  const FilterState filter(cfg, "client_0", "server", 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  std::vector<FeatureVector> xs(static_cast<std::size_t>(st.range(0)));
  for (auto& x : xs) {
    x.values.resize(static_cast<std::size_t>(cfg.feature_dim));
    for (auto& v : x.values) v = g(rng);
  }
  for (auto _ : st) {
    benchmark::DoNotOptimize(Parallel ? estimate_batch(filter, xs) : estimate_batch_serial(filter, xs));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_LogProbs<false>)->Name("log_probs/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_LogProbs<true>)->Name("log_probs/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_GradSum<false>)->Name("grad_sum/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_GradSum<true>)->Name("grad_sum/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_Generate<false>)->Name("generate/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Generate<true>)->Name("generate/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_Estimate<false>)->Name("estimate/serial")->Arg(192)->Arg(1024);
BENCHMARK(BM_Estimate<true>)->Name("estimate/omp")->Arg(192)->Arg(1024);

BENCHMARK_MAIN();
