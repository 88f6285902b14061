#include "fedr/kernels.hpp"

#include <exception>
#include <mutex>

#ifdef FEDR_HAVE_OPENMP
#include <omp.h>
#endif

namespace fedr {

namespace {

// Exceptions must not escape an OpenMP region; the first one is kept and
// rethrown after the loop.
class ErrorSlot {
 public:
  template <typename F>
  void run(F&& f) {
    try {
      f();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!first_) first_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (first_) std::rethrow_exception(first_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr first_;
};

}  // namespace

int parallel_threads() {
#ifdef FEDR_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Vec batch_log_probs_serial(const TokenPolicy& policy, std::span<const SequencePair> pairs) {
  Vec out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out[i] = log_prob(policy, pairs[i].prompt, pairs[i].response);
  }
  return out;
}

Vec batch_log_probs(const TokenPolicy& policy, std::span<const SequencePair> pairs) {
  Vec out(pairs.size());
  ErrorSlot err;
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    err.run([&] { out[i] = log_prob(policy, pairs[i].prompt, pairs[i].response); });
  }
  err.rethrow();
  return out;
}

Vec batch_log_probs(const ReferenceSnapshot& ref, std::span<const SequencePair> pairs) {
  Vec out(pairs.size());
  ErrorSlot err;
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    err.run([&] { out[i] = log_prob(ref, pairs[i].prompt, pairs[i].response); });
  }
  err.rethrow();
  return out;
}

Vec weighted_grad_sum_serial(const TokenPolicy& policy, std::span<const SequencePair> pairs,
                             std::span<const double> weights, Vec* log_probs) {
  if (weights.size() != pairs.size()) throw ShapeError("one weight per pair required");
  Vec grad(policy.num_params(), 0.0);
  if (log_probs) log_probs->assign(pairs.size(), 0.0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double lp =
        accumulate_grad_log_prob(policy, pairs[i].prompt, pairs[i].response, weights[i], grad);
    if (log_probs) (*log_probs)[i] = lp;
  }
  return grad;
}

Vec weighted_grad_sum(const TokenPolicy& policy, std::span<const SequencePair> pairs,
                      std::span<const double> weights, Vec* log_probs) {
  if (weights.size() != pairs.size()) throw ShapeError("one weight per pair required");
  const std::size_t P = policy.num_params();
  const std::size_t n_chunks = (pairs.size() + kGradChunk - 1) / kGradChunk;
  if (n_chunks <= 1) return weighted_grad_sum_serial(policy, pairs, weights, log_probs);

  std::vector<Vec> partial(n_chunks, Vec(P, 0.0));
  Vec lps(pairs.size(), 0.0);
  ErrorSlot err;
  const auto nc = static_cast<std::ptrdiff_t>(n_chunks);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < nc; ++c) {
    err.run([&] {
      const std::size_t begin = static_cast<std::size_t>(c) * kGradChunk;
      const std::size_t end = std::min(pairs.size(), begin + kGradChunk);
      for (std::size_t i = begin; i < end; ++i) {
        lps[i] = accumulate_grad_log_prob(policy, pairs[i].prompt, pairs[i].response, weights[i],
                                          partial[static_cast<std::size_t>(c)]);
      }
    });
  }
  err.rethrow();
  Vec grad = std::move(partial[0]);
  for (std::size_t c = 1; c < n_chunks; ++c) {
    const Vec& pc = partial[c];
    for (std::size_t j = 0; j < P; ++j) grad[j] += pc[j];
  }
  if (log_probs) *log_probs = std::move(lps);
  return grad;
}

std::vector<Tokens> batch_generate_serial(const TokenPolicy& policy,
                                          std::span<const Tokens> prompts,
                                          const DecodeConfig& cfg) {
  std::vector<Tokens> out(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    DecodeConfig c = cfg;
    c.seed = cfg.seed + i;
    out[i] = generate(policy, prompts[i], c);
  }
  return out;
}

std::vector<Tokens> batch_generate(const TokenPolicy& policy, std::span<const Tokens> prompts,
                                   const DecodeConfig& cfg) {
  std::vector<Tokens> out(prompts.size());
  ErrorSlot err;
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    err.run([&] {
      DecodeConfig c = cfg;
      c.seed = cfg.seed + static_cast<std::uint64_t>(i);
      out[static_cast<std::size_t>(i)] = generate(policy, prompts[static_cast<std::size_t>(i)], c);
    });
  }
  err.rethrow();
  return out;
}

}  // namespace fedr
