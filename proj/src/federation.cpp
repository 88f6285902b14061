#include "fedr/federation.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include "fedr/kernels.hpp"
#include "json.hpp"

namespace fedr {

using nlohmann::json;

// --- messages ----------------------------------------------------------------

const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::sample_ids:
      return "sample_ids";
    case MessageKind::responses:
      return "responses";
    case MessageKind::envelope:
      return "envelope";
  }
  return "envelope";
}

std::size_t MessageLog::total_bytes() const {
  std::size_t total = 0;
  for (const auto& r : records) total += r.payload_bytes;
  return total;
}

double MessageLog::total_mb() const {
  return static_cast<double>(total_bytes()) / static_cast<double>(1u << 20);
}

void account_message(MessageLog& log, int round, const std::string& sender,
                     const std::string& receiver, MessageKind kind, std::string payload) {
  MessageRecord r;
  r.round = round;
  r.sender = sender;
  r.receiver = receiver;
  r.kind = kind;
  r.payload_bytes = payload.size() + kEnvelopeBytes;
  r.payload = std::move(payload);
  log.records.push_back(std::move(r));
}

std::string message_to_jsonl(const MessageRecord& m) {
  json j = {{"round", m.round},       {"sender", m.sender},
            {"receiver", m.receiver}, {"kind", to_string(m.kind)},
            {"payload", m.payload},   {"payload_bytes", m.payload_bytes}};
  return j.dump();
}

void save_message_log(const std::string& path, const MessageLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& r : log.records) out << message_to_jsonl(r) << '\n';
  if (!out) throw Error("write failed for " + path);
}

// --- data --------------------------------------------------------------------

FederationData from_synthetic(SyntheticData d) {
  return FederationData{std::move(d.locals), std::move(d.pool), std::move(d.tests),
                        std::move(d.server_corpus), std::move(d.demo)};
}

Vocabulary build_vocabulary(const FederationData& data) {
  std::vector<std::string> words = {"<pad>", "<eos>", "Q:", "?", "Answer:", "Example:",
                                    "because", "is", "so", "A.", "B.", "C.", "D.",
                                    "A", "B", "C", "D"};
  std::set<std::string> seen(words.begin(), words.end());
  std::set<std::string> extra;
  auto add_text = [&](const std::string& text) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) {
        std::string w = text.substr(i, j - i);
        if (!seen.count(w)) extra.insert(std::move(w));
      }
      i = j;
    }
  };
  auto add_sample = [&](const McqSample& s) {
    add_text(s.question);
    for (const auto& c : s.choices) add_text(c);
    if (s.rationale) add_text(*s.rationale);
  };
  for (const auto& ds : data.locals)
    for (const auto& s : ds.samples) add_sample(s);
  for (const auto& ds : data.tests)
    for (const auto& s : ds.samples) add_sample(s);
  for (const auto& s : data.pool.samples) add_sample(s);
  for (const auto& s : data.server_corpus.samples) add_sample(s);
  add_sample(data.demo);
  words.insert(words.end(), extra.begin(), extra.end());
  return Vocabulary(std::move(words));
}

std::string client_name(int k) { return "client_" + std::to_string(k); }

LocalDataset union_tests(const FederationData& data) {
  LocalDataset out;
  out.owner = -1;
  for (const auto& ds : data.tests) {
    out.samples.insert(out.samples.end(), ds.samples.begin(), ds.samples.end());
  }
  return out;
}

// --- metrics -----------------------------------------------------------------

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%s,%.17g,%.17g,%zu,%.17g\n", r.round, r.model.c_str(),
                  to_string(r.mode), r.accuracy, r.mean_loss, r.selected, r.cum_mb);
    out += buf;
  }
  return out;
}

void save_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << metrics_to_csv(rows);
  if (!out) throw Error("write failed for " + path);
}

// --- federation context --------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, int index = 0) {
  std::uint64_t h = fnv1a64(tag, seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  return fnv1a64(std::to_string(index), h);
}

PolicyShape shape_for(const ModelConfig& m, std::size_t vocab_size) {
  PolicyShape s;
  s.vocab_size = static_cast<int>(vocab_size);
  s.context_len = m.context_len;
  s.embed_dim = m.embed_dim;
  s.window = m.window;
  s.hidden = m.hidden;
  return s;
}

}  // namespace

Federation::Federation(FederationConfig c, FederationData d)
    : cfg(std::move(c)), data(std::move(d)), vocab(build_vocabulary(data)) {
  cfg.validate();
  if (static_cast<int>(data.locals.size()) != cfg.clients ||
      static_cast<int>(data.tests.size()) != cfg.clients) {
    throw ConfigError("config has " + std::to_string(cfg.clients) + " clients but the data has " +
                      std::to_string(data.locals.size()) + " local and " +
                      std::to_string(data.tests.size()) + " test sets");
  }
  validate_samples(data.pool.samples, DatasetKind::pool);
  for (const auto& ds : data.locals) validate_samples(ds.samples, DatasetKind::local);
  for (const auto& ds : data.tests) validate_samples(ds.samples, DatasetKind::local);
  check_disjoint_ids(data.pool, data.locals);
  cfg.filter.lambda = cfg.lambda;
  for (std::size_t i = 0; i < data.pool.samples.size(); ++i) {
    const auto& s = data.pool.samples[i];
    pool_ids.push_back(s.id);
    pool_features.push_back(featurize(s, cfg.filter.feature_dim));
    pool_index.emplace(s.id, i);
  }
}

PolicyShape Federation::client_shape() const { return shape_for(cfg.client_model, vocab.size()); }
PolicyShape Federation::server_shape() const { return shape_for(cfg.server_model, vocab.size()); }

Tokens Federation::pool_prompt(const std::string& id) const {
  return format_prompt(data.pool.at(id), cfg.train_mode, &data.demo, vocab);
}

SftConfig Federation::client_sft(int k) const {
  return SftConfig{cfg.client_model.sft_epochs, cfg.client_model.sft_lr, cfg.client_model.sft_batch,
                   cfg.train_mode, derive_seed(cfg.seed, "client-sft", k)};
}

SftConfig Federation::server_sft() const {
  return SftConfig{cfg.server_model.sft_epochs, cfg.server_model.sft_lr, cfg.server_model.sft_batch,
                   cfg.train_mode, derive_seed(cfg.seed, "server-sft")};
}

// --- initialisation ------------------------------------------------------------

namespace {

std::vector<std::string> initial_selection(const Federation& fed) {
  if (fed.pool_ids.empty()) return {};
  const int k = std::min<int>(fed.cfg.cold_start_k, static_cast<int>(fed.pool_ids.size()));
  return cold_start(fed.pool_ids, fed.pool_features, k, derive_seed(fed.cfg.seed, "cold-start"));
}

}  // namespace

RoundState initialize(const Federation& fed) {
  const auto& cfg = fed.cfg;
  RoundState st;
  st.round = 0;
  const auto cold = initial_selection(fed);

  for (int k = 0; k < cfg.clients; ++k) {
    TokenPolicy init(fed.client_shape(), client_name(k), derive_seed(cfg.seed, "client-init", k),
                     cfg.client_model.init_scale);
    auto res = sft(std::move(init), fed.data.locals[k].samples, fed.client_sft(k), fed.vocab,
                   &fed.data.demo, 1);
    ClientState cs{std::move(res.policy), std::move(res.reference),
                   FilterState(cfg.filter, client_name(k), kServerName,
                               derive_seed(cfg.seed, "client-filter", k)),
                   cold, RewardTrace{}, {}};
    cs.trace.alpha = cfg.alpha;
    st.clients.push_back(std::move(cs));
  }

  TokenPolicy server_init(fed.server_shape(), kServerName, derive_seed(cfg.seed, "server-init"),
                          cfg.server_model.init_scale);
  auto res = sft(std::move(server_init), fed.data.server_corpus.samples, fed.server_sft(),
                 fed.vocab, &fed.data.demo, 0);
  st.server.policy = std::move(res.policy);
  st.server.reference.emplace(std::move(res.reference));
  for (int k = 0; k < cfg.clients; ++k) {
    st.server.filters.emplace_back(cfg.filter, kServerName, client_name(k),
                                   derive_seed(cfg.seed, "server-filter", k));
    st.server.selections.push_back(cold);
    RewardTrace tr;
    tr.alpha = cfg.alpha;
    st.server.traces.push_back(tr);
  }
  return st;
}

// --- one round -------------------------------------------------------------------

namespace {

// Per-round exchange bookkeeping: responses are generated once per (model,
// sample) and each client/server pair exchanges a given sample at most once.
class Exchange {
 public:
  Exchange(const Federation& fed, RoundState& st) : fed_(fed), st_(st), exchanged_(fed.cfg.clients) {}

  // Messages for ids not yet exchanged between client k and the server this
  // round. `client_initiated` picks the direction of the id request and the
  // order of the two responses messages.
  void run(int k, const std::vector<std::string>& ids, bool client_initiated) {
    std::vector<std::string> fresh;
    for (const auto& id : ids) {
      if (!fed_.pool_index.count(id)) throw ValidationError("selected id '" + id + "' not in pool");
      if (!exchanged_[k].count(id)) fresh.push_back(id);
    }
    if (fresh.empty()) return;
    const std::string client = client_name(k);
    const auto& server_resp = responses(kServerName, st_.server.policy, fresh);
    const auto& client_resp = responses(client, st_.clients[k].policy, fresh);

    const int t = st_.round;
    json id_list = fresh;
    auto payload = [&](const std::map<std::string, Tokens>& table) {
      json obj = json::object();
      for (const auto& id : fresh) obj[id] = fed_.vocab.decode(table.at(id));
      return obj.dump();
    };
    if (client_initiated) {
      account_message(st_.log, t, client, kServerName, MessageKind::sample_ids, id_list.dump());
      account_message(st_.log, t, kServerName, client, MessageKind::responses, payload(server_resp));
      account_message(st_.log, t, client, kServerName, MessageKind::responses, payload(client_resp));
    } else {
      account_message(st_.log, t, kServerName, client, MessageKind::sample_ids, id_list.dump());
      account_message(st_.log, t, client, kServerName, MessageKind::responses, payload(client_resp));
      account_message(st_.log, t, kServerName, client, MessageKind::responses, payload(server_resp));
    }
    exchanged_[k].insert(fresh.begin(), fresh.end());
  }

  ReasoningTriple triple(int k, const std::string& id) {
    return ReasoningTriple{id, fed_.pool_prompt(id), cache_.at(client_name(k)).at(id),
                           cache_.at(kServerName).at(id)};
  }

  std::vector<ReasoningTriple> triples(int k, const std::vector<std::string>& ids) {
    std::vector<ReasoningTriple> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(triple(k, id));
    return out;
  }

 private:
  const std::map<std::string, Tokens>& responses(const std::string& model, const TokenPolicy& policy,
                                                 const std::vector<std::string>& ids) {
    auto& table = cache_[model];
    std::vector<std::string> missing;
    std::vector<Tokens> prompts;
    for (const auto& id : ids) {
      if (!table.count(id)) {
        missing.push_back(id);
        prompts.push_back(fed_.pool_prompt(id));
      }
    }
    if (!missing.empty()) {
      DecodeConfig dc = fed_.cfg.decode;
      dc.seed = derive_seed(fed_.cfg.decode.seed, model + "-r" + std::to_string(st_.round),
                            static_cast<int>(table.size()));
      auto outs = batch_generate(policy, prompts, dc);
      for (std::size_t i = 0; i < missing.size(); ++i) table.emplace(missing[i], std::move(outs[i]));
    }
    return table;
  }

  const Federation& fed_;
  RoundState& st_;
  std::vector<std::set<std::string>> exchanged_;
  std::map<std::string, std::map<std::string, Tokens>> cache_;
};

std::vector<FeatureVector> features_of(const Federation& fed, const std::vector<std::string>& ids) {
  std::vector<FeatureVector> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(fed.pool_features.at(fed.pool_index.at(id)));
  return out;
}

std::vector<std::string> reselect(const Federation& fed, const FilterState& filter) {
  const Vec est = estimate_batch(filter, fed.pool_features);
  std::vector<ScoredId> scored;
  scored.reserve(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) scored.emplace_back(fed.pool_ids[i], est[i]);
  return select(filter.selection, scored);
}

// Filter update on the observed batch losses of the current selection, then
// re-selection over the whole pool.
std::vector<std::string> filter_step(const Federation& fed, FilterState& filter, RewardTrace& trace,
                                     const std::vector<std::string>& selection,
                                     const Vec& batch_losses, bool first_batch) {
  const auto step = trace.observe(batch_losses, first_batch);
  update_filter(filter, features_of(fed, selection), step.r_total, fed.cfg.filter.lr,
                fed.cfg.filter.epochs);
  return reselect(fed, filter);
}

[[noreturn]] void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(ctx + ": " + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(ctx + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ctx + ": " + e.what());
  }
}

void client_round(const Federation& fed, RoundState& st, Exchange& ex, int k) {
  const auto& cfg = fed.cfg;
  auto& cs = st.clients[k];
  const DistillConfig dcfg{cfg.beta};
  std::mt19937_64 rng(derive_seed(cfg.seed, "client-batches-r" + std::to_string(st.round), k));
  cs.trace.start_round();
  cs.round_losses.clear();
  ex.run(k, cs.selection, true);

  for (int b = 0; b < cfg.batches_per_round; ++b) {
    const std::string ctx = "round " + std::to_string(st.round) + ", " + client_name(k) +
                            ", batch " + std::to_string(b);
    try {
      if (cs.selection.empty()) break;
      // Reward from the pre-update selection; the policy step uses the new one.
      const auto current = ex.triples(k, cs.selection);
      const auto observed = client_batch_loss(current, cs.policy, *cs.reference, dcfg, false);
      cs.round_losses.insert(cs.round_losses.end(), observed.per_sample.begin(),
                             observed.per_sample.end());
      auto next = filter_step(fed, *cs.filter, cs.trace, cs.selection, observed.per_sample, b == 0);
      ex.run(k, next, true);

      std::vector<std::string> order = next;
      for (int e = 0; e < cfg.epochs_per_round; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
          const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
          const std::vector<std::string> mb(order.begin() + static_cast<std::ptrdiff_t>(i),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
          const auto loss = client_batch_loss(ex.triples(k, mb), cs.policy, *cs.reference, dcfg, true);
          if (!all_finite(loss.grad)) throw DivergenceError("non-finite client gradient");
          apply_update(cs.policy, loss.grad, cfg.lr_client);
        }
      }
      st.updates.push_back(UpdateRecord{st.round, client_name(k), next, st.log.records.size()});
      cs.selection = std::move(next);
    } catch (...) {
      rethrow_with_context(ctx);
    }
  }
}

void server_round(const Federation& fed, RoundState& st, Exchange& ex) {
  const auto& cfg = fed.cfg;
  auto& sv = st.server;
  const DistillConfig dcfg{cfg.beta};
  for (auto& tr : sv.traces) tr.start_round();
  sv.round_losses.clear();
  for (int k = 0; k < cfg.clients; ++k) ex.run(k, sv.selections[k], false);

  for (int b = 0; b < cfg.batches_per_round; ++b) {
    const std::string ctx =
        "round " + std::to_string(st.round) + ", server, batch " + std::to_string(b);
    try {
      std::map<int, std::set<std::string>> filtered;
      for (int k = 0; k < cfg.clients; ++k) {
        auto& sel = sv.selections[k];
        if (sel.empty()) continue;
        const auto observed =
            server_pair_batch_loss(ex.triples(k, sel), sv.policy, *sv.reference, dcfg);
        sv.round_losses.insert(sv.round_losses.end(), observed.per_sample.begin(),
                               observed.per_sample.end());
        auto next = filter_step(fed, sv.filters[k], sv.traces[k], sel, observed.per_sample, b == 0);
        ex.run(k, next, false);
        sel = std::move(next);
        filtered[k] = std::set<std::string>(sel.begin(), sel.end());
      }
      if (filtered.empty()) break;
      sv.partition = overlap_partition(filtered);
      TripleMap triples;
      std::set<std::string> used;
      for (const auto& [k, ids] : filtered) {
        for (const auto& id : ids) {
          triples.emplace(std::make_pair(id, k), ex.triple(k, id));
          used.insert(id);
        }
      }
      for (int e = 0; e < cfg.epochs_per_round; ++e) {
        const Vec g = server_loss_grad(triples, sv.partition, sv.policy, *sv.reference, dcfg);
        if (!all_finite(g)) throw DivergenceError("non-finite server gradient");
        apply_update(sv.policy, g, cfg.lr_server);
      }
      st.updates.push_back(UpdateRecord{st.round, kServerName,
                                        std::vector<std::string>(used.begin(), used.end()),
                                        st.log.records.size()});
    } catch (...) {
      rethrow_with_context(ctx);
    }
  }
}

}  // namespace

RoundState run_round(const Federation& fed, RoundState state) {
  state.round += 1;
  if (state.clients.size() != static_cast<std::size_t>(fed.cfg.clients) ||
      state.server.filters.size() != static_cast<std::size_t>(fed.cfg.clients)) {
    throw ValidationError("round state does not match the configured client count");
  }
  Exchange ex(fed, state);
  // Client order is fixed ascending; the server update is a barrier after them.
  for (int k = 0; k < fed.cfg.clients; ++k) client_round(fed, state, ex, k);
  server_round(fed, state, ex);
  return state;
}

// --- evaluation & run ------------------------------------------------------------

std::vector<EvalReport> evaluate_all(const Federation& fed, const RoundState& state) {
  std::vector<EvalReport> out;
  const auto modes = {PromptMode::zero_shot, PromptMode::one_shot};
  for (int k = 0; k < fed.cfg.clients; ++k) {
    for (auto m : modes) {
      out.push_back(evaluate(state.clients[k].policy, fed.data.tests[k].samples, m, fed.cfg.decode,
                             fed.vocab, &fed.data.demo, client_name(k)));
    }
  }
  const auto all = union_tests(fed.data);
  for (auto m : modes) {
    out.push_back(evaluate(state.server.policy, all.samples, m, fed.cfg.decode, fed.vocab,
                           &fed.data.demo, kServerName));
  }
  return out;
}

namespace {

double mean_of(const Vec& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::size_t server_selected(const ServerState& sv) {
  std::set<std::string> u;
  for (const auto& sel : sv.selections) u.insert(sel.begin(), sel.end());
  return u.size();
}

}  // namespace

RunResult run(const Federation& fed) {
  RunResult res;
  res.state = initialize(fed);
  res.initial_reports = evaluate_all(fed, res.state);
  const RoundState initial = res.state;
  const int K = fed.cfg.clients;
  for (int t = 1; t <= fed.cfg.rounds; ++t) {
    res.state = run_round(fed, std::move(res.state));
    const auto reports = evaluate_all(fed, res.state);
    const double mb = res.state.log.total_mb();
    for (const auto& r : reports) {
      MetricsRow row;
      row.round = t;
      row.model = r.model;
      row.mode = r.mode;
      row.accuracy = r.accuracy;
      if (r.model == kServerName) {
        row.mean_loss = mean_of(res.state.server.round_losses);
        row.selected = server_selected(res.state.server);
      } else {
        for (int k = 0; k < K; ++k) {
          if (client_name(k) != r.model) continue;
          row.mean_loss = mean_of(res.state.clients[k].round_losses);
          row.selected = res.state.clients[k].selection.size();
        }
      }
      row.cum_mb = mb;
      res.metrics.push_back(std::move(row));
    }
  }
  check_reference_freeze(initial, res.state);
  check_provenance(res.state);
  check_no_parameters_in_log(res.state);
  return res;
}

// --- invariants ------------------------------------------------------------------

void check_reference_freeze(const RoundState& initial, const RoundState& final_state) {
  auto same = [](const std::optional<ReferenceSnapshot>& a, const std::optional<ReferenceSnapshot>& b,
                 const std::string& who) {
    if (!a || !b) throw ValidationError(who + " has no reference snapshot");
    if (a->frozen_round() != b->frozen_round() || !(a->shape() == b->shape()) ||
        a->params().size() != b->params().size() ||
        !std::equal(a->params().begin(), a->params().end(), b->params().begin(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; })) {
      throw ValidationError("reference snapshot of " + who + " changed after freezing");
    }
  };
  if (initial.clients.size() != final_state.clients.size()) {
    throw ValidationError("client count changed between states");
  }
  for (std::size_t k = 0; k < initial.clients.size(); ++k) {
    same(initial.clients[k].reference, final_state.clients[k].reference,
         client_name(static_cast<int>(k)));
  }
  same(initial.server.reference, final_state.server.reference, kServerName);
}

void check_provenance(const RoundState& state) {
  for (const auto& u : state.updates) {
    if (u.log_position > state.log.records.size()) {
      throw ValidationError("update record points past the end of the message log");
    }
    std::set<std::string> requested;
    for (std::size_t i = 0; i < u.log_position; ++i) {
      const auto& m = state.log.records[i];
      if (m.round != u.round || m.kind != MessageKind::sample_ids) continue;
      const bool involved =
          u.learner == kServerName || m.sender == u.learner || m.receiver == u.learner;
      if (!involved) continue;
      for (const auto& id : json::parse(m.payload)) requested.insert(id.get<std::string>());
    }
    for (const auto& id : u.sample_ids) {
      if (!requested.count(id)) {
        throw ValidationError("round " + std::to_string(u.round) + ": " + u.learner +
                              " trained on sample '" + id +
                              "' with no earlier sample_ids message in the round");
      }
    }
  }
}

void check_no_parameters_in_log(const RoundState& state) {
  for (std::size_t i = 0; i < state.log.records.size(); ++i) {
    const auto& m = state.log.records[i];
    const std::string where = "message " + std::to_string(i);
    if (m.payload_bytes != m.payload.size() + kEnvelopeBytes) {
      throw ValidationError(where + " has an inconsistent byte count");
    }
    json j;
    try {
      j = json::parse(m.payload);
    } catch (const json::exception&) {
      throw ValidationError(where + " payload is not JSON");
    }
    // Only text crosses the boundary: id lists and id -> response-text maps.
    if (m.kind == MessageKind::sample_ids) {
      if (!j.is_array()) throw ValidationError(where + " sample_ids payload is not a list");
      for (const auto& v : j) {
        if (!v.is_string()) throw ValidationError(where + " sample_ids contains a non-string");
      }
    } else if (m.kind == MessageKind::responses) {
      if (!j.is_object()) throw ValidationError(where + " responses payload is not an object");
      for (const auto& [id, v] : j.items()) {
        if (!v.is_string()) throw ValidationError(where + " response for '" + id + "' is not text");
      }
    } else {
      throw ValidationError(where + " has unexpected kind");
    }
  }
}

}  // namespace fedr
