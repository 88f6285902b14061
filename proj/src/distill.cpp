#include "fedr/distill.hpp"

#include "fedr/kernels.hpp"

namespace fedr {

namespace {

void check_same_architecture(const TokenPolicy& policy, const ReferenceSnapshot& ref) {
  if (!(policy.shape() == ref.shape())) {
    throw ShapeError("policy '" + policy.role() + "' and reference of '" + ref.source_role() +
                     "' have different architectures");
  }
}

// One preference term: weight * -log sigma(beta * [lr(preferred) - lr(dispreferred)]).
struct Term {
  const Tokens* prompt;
  const Tokens* preferred;
  const Tokens* dispreferred;
  double weight;
};

// Evaluates sum_i weight_i * loss_i / normaliser and (optionally) its gradient.
// Per-term losses are returned unweighted.
BatchLoss evaluate_terms(const std::vector<Term>& terms, double normaliser,
                         const TokenPolicy& policy, const ReferenceSnapshot& ref,
                         const DistillConfig& cfg, bool with_grad) {
  check_same_architecture(policy, ref);
  std::vector<SequencePair> pairs;
  pairs.reserve(2 * terms.size());
  for (const auto& t : terms) {
    pairs.push_back({*t.prompt, *t.preferred});
    pairs.push_back({*t.prompt, *t.dispreferred});
  }
  const Vec lp_pi = batch_log_probs(policy, pairs);
  const Vec lp_ref = batch_log_probs(ref, pairs);

  BatchLoss out;
  out.per_sample.resize(terms.size());
  Vec weights(pairs.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double margin =
        (lp_pi[2 * i] - lp_ref[2 * i]) - (lp_pi[2 * i + 1] - lp_ref[2 * i + 1]);
    const double loss = preference_loss(margin, cfg.beta);
    out.per_sample[i] = loss;
    total += terms[i].weight * loss;
    // d loss / d margin = -beta * sigma(-beta * margin)
    const double dm = -cfg.beta * sigmoid(-cfg.beta * margin) * terms[i].weight / normaliser;
    weights[2 * i] = dm;
    weights[2 * i + 1] = -dm;
  }
  out.mean = normaliser > 0 ? total / normaliser : 0.0;
  if (with_grad) {
    out.grad = weighted_grad_sum(policy, pairs, weights);
  }
  return out;
}

}  // namespace

void validate_triple(const ReasoningTriple& t) {
  if (t.client_response.empty() || t.server_response.empty()) {
    throw ValidationError("triple for sample '" + t.sample_id + "' has an empty response");
  }
}

double client_margin(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref) {
  check_same_architecture(policy, ref);
  return (log_prob(policy, t.prompt, t.server_response) -
          log_prob(ref, t.prompt, t.server_response)) -
         (log_prob(policy, t.prompt, t.client_response) -
          log_prob(ref, t.prompt, t.client_response));
}

double server_margin(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref) {
  return -client_margin(t, policy, ref);
}

double client_loss(const ReasoningTriple& t, const TokenPolicy& policy,
                   const ReferenceSnapshot& ref, const DistillConfig& cfg) {
  validate_triple(t);
  return preference_loss(client_margin(t, policy, ref), cfg.beta);
}

Vec client_loss_grad(const ReasoningTriple& t, const TokenPolicy& policy,
                     const ReferenceSnapshot& ref, const DistillConfig& cfg) {
  validate_triple(t);
  const std::vector<Term> terms = {{&t.prompt, &t.server_response, &t.client_response, 1.0}};
  return evaluate_terms(terms, 1.0, policy, ref, cfg, true).grad;
}

BatchLoss client_batch_loss(const std::vector<ReasoningTriple>& triples, const TokenPolicy& policy,
                            const ReferenceSnapshot& ref, const DistillConfig& cfg,
                            bool with_grad) {
  std::vector<Term> terms;
  terms.reserve(triples.size());
  for (const auto& t : triples) {
    validate_triple(t);
    terms.push_back({&t.prompt, &t.server_response, &t.client_response, 1.0});
  }
  return evaluate_terms(terms, static_cast<double>(triples.size()), policy, ref, cfg, with_grad);
}

BatchLoss server_pair_batch_loss(const std::vector<ReasoningTriple>& triples,
                                 const TokenPolicy& policy, const ReferenceSnapshot& ref,
                                 const DistillConfig& cfg) {
  std::vector<Term> terms;
  terms.reserve(triples.size());
  for (const auto& t : triples) {
    validate_triple(t);
    terms.push_back({&t.prompt, &t.client_response, &t.server_response, 1.0});
  }
  return evaluate_terms(terms, static_cast<double>(triples.size()), policy, ref, cfg, false);
}

OverlapPartition overlap_partition(const std::map<int, std::set<std::string>>& filtered) {
  std::map<std::string, std::vector<int>> selectors;
  for (const auto& [client, ids] : filtered) {
    for (const auto& id : ids) selectors[id].push_back(client);
  }
  OverlapPartition out;
  for (auto& [id, clients] : selectors) {
    if (clients.size() >= 2) {
      const double w = 1.0 / static_cast<double>(clients.size());
      for (int k : clients) out.weights[{id, k}] = w;
      out.overlapping.emplace(id, std::move(clients));
    } else {
      out.weights[{id, clients.front()}] = 1.0;
      out.disjoint.emplace(id, clients.front());
    }
  }
  return out;
}

namespace {

std::vector<Term> server_terms(const TripleMap& triples, const OverlapPartition& partition,
                               double& n_samples) {
  std::vector<Term> terms;
  auto add = [&](const std::string& id, int k, double w) {
    auto it = triples.find({id, k});
    if (it == triples.end()) {
      throw ValidationError("no reasoning triple for sample '" + id + "' and client " +
                            std::to_string(k));
    }
    validate_triple(it->second);
    terms.push_back(
        {&it->second.prompt, &it->second.client_response, &it->second.server_response, w});
  };
  for (const auto& [id, clients] : partition.overlapping) {
    for (int k : clients) {
      auto w = partition.weights.find({id, k});
      if (w == partition.weights.end()) {
        throw ValidationError("missing overlap weight for sample '" + id + "' and client " +
                              std::to_string(k));
      }
      add(id, k, w->second);
    }
  }
  for (const auto& [id, k] : partition.disjoint) add(id, k, 1.0);
  n_samples = static_cast<double>(partition.overlapping.size() + partition.disjoint.size());
  return terms;
}

}  // namespace

double server_loss(const TripleMap& triples, const OverlapPartition& partition,
                   const TokenPolicy& policy, const ReferenceSnapshot& ref,
                   const DistillConfig& cfg) {
  double n = 0;
  const auto terms = server_terms(triples, partition, n);
  return evaluate_terms(terms, n, policy, ref, cfg, false).mean;
}

Vec server_loss_grad(const TripleMap& triples, const OverlapPartition& partition,
                     const TokenPolicy& policy, const ReferenceSnapshot& ref,
                     const DistillConfig& cfg) {
  double n = 0;
  const auto terms = server_terms(triples, partition, n);
  if (terms.empty()) return Vec(policy.num_params(), 0.0);
  return evaluate_terms(terms, n, policy, ref, cfg, true).grad;
}

}  // namespace fedr
