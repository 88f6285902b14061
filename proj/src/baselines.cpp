#include "fedr/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "json.hpp"

namespace fedr {

Vec fine_tune(TokenPolicy& policy, const std::vector<SequencePair>& pairs, int epochs, double lr,
              int batch_size, std::uint64_t seed) {
  if (epochs < 0 || lr < 0 || batch_size < 1) {
    throw ConfigError("fine-tuning needs epochs >= 0, lr >= 0, batch_size >= 1");
  }
  Vec epoch_losses;
  if (pairs.empty() || lr == 0.0) return epoch_losses;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  AdamState adam;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t tok_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t end = std::min(order.size(), b + bs);
      std::vector<SequencePair> batch;
      std::size_t n_tok = 0;
      for (std::size_t i = b; i < end; ++i) {
        batch.push_back(pairs[order[i]]);
        n_tok += pairs[order[i]].response.size();
      }
      Vec weights(batch.size(), -1.0 / static_cast<double>(n_tok));
      Vec lps;
      const Vec grad = weighted_grad_sum(policy, batch, weights, &lps);
      for (double lp : lps) loss_sum -= lp;
      tok_sum += n_tok;
      if (!std::isfinite(loss_sum) || !all_finite(grad)) {
        throw DivergenceError("fine-tuning diverged at epoch " + std::to_string(epoch));
      }
      adam.step_update(policy.mutable_params(), grad, lr);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(tok_sum));
  }
  return epoch_losses;
}

std::vector<MetricsRow> metrics_rows(int round, const std::vector<EvalReport>& reports,
                                     double cum_mb) {
  std::vector<MetricsRow> rows;
  for (const auto& r : reports) {
    MetricsRow row;
    row.round = round;
    row.model = r.model;
    row.mode = r.mode;
    row.accuracy = r.accuracy;
    row.cum_mb = cum_mb;
    rows.push_back(std::move(row));
  }
  return rows;
}

BaselineResult run_standalone(const Federation& fed) {
  BaselineResult res;
  res.state = initialize(fed);
  res.reports = evaluate_all(fed, res.state);
  res.metrics = metrics_rows(0, res.reports, 0.0);
  return res;
}

BaselineResult run_fedkd(const Federation& fed) {
  BaselineResult res;
  res.state = initialize(fed);
  auto& st = res.state;
  st.round = 1;
  const auto& ids = fed.pool_ids;
  if (!ids.empty()) {
    std::vector<Tokens> prompts;
    for (const auto& id : ids) prompts.push_back(fed.pool_prompt(id));
    DecodeConfig dc = fed.cfg.decode;
    dc.seed = fnv1a64("fedkd-server", fed.cfg.decode.seed);
    const auto responses = batch_generate(st.server.policy, prompts, dc);
    nlohmann::json id_list = ids;
    nlohmann::json texts = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) texts[ids[i]] = fed.vocab.decode(responses[i]);
    const std::string id_payload = id_list.dump();
    const std::string resp_payload = texts.dump();

    std::vector<SequencePair> pairs;
    for (std::size_t i = 0; i < ids.size(); ++i) pairs.push_back({prompts[i], responses[i]});
    for (int k = 0; k < fed.cfg.clients; ++k) {
      account_message(st.log, 1, client_name(k), kServerName, MessageKind::sample_ids, id_payload);
      account_message(st.log, 1, kServerName, client_name(k), MessageKind::responses, resp_payload);
      fine_tune(st.clients[k].policy, pairs, fed.cfg.fedkd_epochs, fed.cfg.fedkd_lr,
                fed.cfg.client_model.sft_batch, fnv1a64("fedkd-" + client_name(k), fed.cfg.seed));
    }
  }
  res.reports = evaluate_all(fed, st);
  res.metrics = metrics_rows(1, res.reports, st.log.total_mb());
  return res;
}

}  // namespace fedr
