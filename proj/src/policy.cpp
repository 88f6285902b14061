#include "fedr/policy.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "fedr/kernels.hpp"

namespace fedr {

std::size_t PolicyShape::num_params() const { return ParamLayout(*this).total; }

ParamLayout::ParamLayout(const PolicyShape& s) {
  const auto V = static_cast<std::size_t>(s.vocab_size);
  const auto e = static_cast<std::size_t>(s.embed_dim);
  const auto W = static_cast<std::size_t>(s.window);
  const auto H = static_cast<std::size_t>(s.hidden);
  input_dim = W * e + e;
  embed = 0;
  query = embed + V * e;
  w1 = query + e;
  b1 = w1 + H * input_dim;
  w2 = b1 + H;
  b2 = w2 + V * H;
  total = b2 + V;
}

namespace {

void check_shape(const PolicyShape& s) {
  if (s.vocab_size < 2 || s.context_len < 1 || s.embed_dim < 1 || s.window < 1 || s.hidden < 1) {
    throw ConfigError("invalid policy shape");
  }
}

Tokens strip_pads(const Tokens& prompt) {
  Tokens out;
  out.reserve(prompt.size());
  for (TokenId t : prompt) {
    if (t != Vocabulary::pad_id) out.push_back(t);
  }
  return out;
}

// Forward (and optionally backward) through one sequence. Returns the summed
// log-probability of tokens seq[start..). When grad is non-null, adds
// scale * gradient into it.
class SequenceRunner {
 public:
  SequenceRunner(const TokenPolicy& policy)
      : p_(policy.params()),
        s_(policy.shape()),
        L_(s_),
        e_(static_cast<std::size_t>(s_.embed_dim)),
        W_(static_cast<std::size_t>(s_.window)),
        H_(static_cast<std::size_t>(s_.hidden)),
        V_(static_cast<std::size_t>(s_.vocab_size)),
        x_(L_.input_dim),
        z_(H_),
        h_(H_),
        logits_(V_),
        prob_(V_) {}

  const double* embed(TokenId t) const {
    return p_.data() + L_.embed + static_cast<std::size_t>(t) * e_;
  }

  void check_tokens(const Tokens& seq) const {
    for (TokenId t : seq) {
      if (t < 0 || static_cast<std::size_t>(t) >= V_) {
        throw EncodingError("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(V_));
      }
    }
  }

  // Computes logits/probabilities for the position after seq[0..pos).
  void forward_step(const Tokens& seq, std::size_t pos) {
    std::fill(x_.begin(), x_.end(), 0.0);
    for (std::size_t j = 0; j < W_; ++j) {
      if (pos + j < W_) continue;
      const std::size_t src = pos + j - W_;
      const double* emb = embed(seq[src]);
      std::copy(emb, emb + e_, x_.begin() + static_cast<std::ptrdiff_t>(j * e_));
    }
    attn_.assign(pos, 0.0);
    if (pos > 0) {
      double mx = -1e300;
      for (std::size_t j = 0; j < pos; ++j) {
        attn_[j] = scores_[j];
        mx = std::max(mx, attn_[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < pos; ++j) {
        attn_[j] = std::exp(attn_[j] - mx);
        z += attn_[j];
      }
      double* pooled = x_.data() + W_ * e_;
      for (std::size_t j = 0; j < pos; ++j) {
        attn_[j] /= z;
        const double* emb = embed(seq[j]);
        for (std::size_t c = 0; c < e_; ++c) pooled[c] += attn_[j] * emb[c];
      }
    }
    const std::size_t in = L_.input_dim;
    for (std::size_t i = 0; i < H_; ++i) {
      const double* row = p_.data() + L_.w1 + i * in;
      double acc = p_[L_.b1 + i];
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * x_[c];
      z_[i] = acc;
      h_[i] = std::tanh(acc);
    }
    double mx = -1e300;
    for (std::size_t v = 0; v < V_; ++v) {
      const double* row = p_.data() + L_.w2 + v * H_;
      double acc = p_[L_.b2 + v];
      for (std::size_t i = 0; i < H_; ++i) acc += row[i] * h_[i];
      logits_[v] = acc;
      mx = std::max(mx, acc);
    }
    double zsum = 0.0;
    for (std::size_t v = 0; v < V_; ++v) {
      prob_[v] = std::exp(logits_[v] - mx);
      zsum += prob_[v];
    }
    for (std::size_t v = 0; v < V_; ++v) prob_[v] /= zsum;
  }

  void compute_scores(const Tokens& seq) {
    scores_.resize(seq.size());
    const double* u = p_.data() + L_.query;
    for (std::size_t j = 0; j < seq.size(); ++j) {
      const double* emb = embed(seq[j]);
      double acc = 0.0;
      for (std::size_t c = 0; c < e_; ++c) acc += emb[c] * u[c];
      scores_[j] = acc;
    }
  }

  // d(scale * log p(target)) backpropagated into grad.
  void backward_step(const Tokens& seq, std::size_t pos, TokenId target, double scale,
                     Vec& grad) {
    dlogits_.assign(V_, 0.0);
    for (std::size_t v = 0; v < V_; ++v) dlogits_[v] = -scale * prob_[v];
    dlogits_[static_cast<std::size_t>(target)] += scale;

    dh_.assign(H_, 0.0);
    for (std::size_t v = 0; v < V_; ++v) {
      const double g = dlogits_[v];
      if (g == 0.0) continue;
      double* grow = grad.data() + L_.w2 + v * H_;
      const double* row = p_.data() + L_.w2 + v * H_;
      for (std::size_t i = 0; i < H_; ++i) {
        grow[i] += g * h_[i];
        dh_[i] += g * row[i];
      }
      grad[L_.b2 + v] += g;
    }
    const std::size_t in = L_.input_dim;
    dx_.assign(in, 0.0);
    for (std::size_t i = 0; i < H_; ++i) {
      const double dz = dh_[i] * (1.0 - h_[i] * h_[i]);
      if (dz == 0.0) continue;
      double* grow = grad.data() + L_.w1 + i * in;
      const double* row = p_.data() + L_.w1 + i * in;
      for (std::size_t c = 0; c < in; ++c) {
        grow[c] += dz * x_[c];
        dx_[c] += dz * row[c];
      }
      grad[L_.b1 + i] += dz;
    }
    for (std::size_t j = 0; j < W_; ++j) {
      if (pos + j < W_) continue;
      const std::size_t src = pos + j - W_;
      double* gemb = grad.data() + L_.embed + static_cast<std::size_t>(seq[src]) * e_;
      for (std::size_t c = 0; c < e_; ++c) gemb[c] += dx_[j * e_ + c];
    }
    if (pos == 0) return;
    const double* dpool = dx_.data() + W_ * e_;
    const double* u = p_.data() + L_.query;
    double* gu = grad.data() + L_.query;
    da_.assign(pos, 0.0);
    double mean = 0.0;
    for (std::size_t j = 0; j < pos; ++j) {
      const double* emb = embed(seq[j]);
      double acc = 0.0;
      for (std::size_t c = 0; c < e_; ++c) acc += emb[c] * dpool[c];
      da_[j] = acc;
      mean += attn_[j] * acc;
    }
    for (std::size_t j = 0; j < pos; ++j) {
      const double ds = attn_[j] * (da_[j] - mean);
      const double* emb = embed(seq[j]);
      double* gemb = grad.data() + L_.embed + static_cast<std::size_t>(seq[j]) * e_;
      for (std::size_t c = 0; c < e_; ++c) {
        gemb[c] += attn_[j] * dpool[c] + ds * u[c];
        gu[c] += ds * emb[c];
      }
    }
  }

  double run(const Tokens& seq, std::size_t start, Vec* grad, double scale) {
    check_tokens(seq);
    compute_scores(seq);
    double total = 0.0;
    for (std::size_t pos = start; pos < seq.size(); ++pos) {
      forward_step(seq, pos);
      const TokenId target = seq[pos];
      const double pt = prob_[static_cast<std::size_t>(target)];
      if (pt < kProbFloor) {
        total += std::log(kProbFloor);
        continue;  // floored: locally constant
      }
      total += std::log(pt);
      if (grad != nullptr && scale != 0.0) backward_step(seq, pos, target, scale, *grad);
    }
    return total;
  }

  const Vec& probabilities() const { return prob_; }
  const Vec& logits() const { return logits_; }

 private:
  const Vec& p_;
  const PolicyShape& s_;
  ParamLayout L_;
  std::size_t e_, W_, H_, V_;
  Vec x_, z_, h_, logits_, prob_;
  Vec scores_, attn_;
  Vec dlogits_, dh_, dx_, da_;
};

Tokens join_checked(const PolicyShape& shape, const Tokens& prompt, const Tokens& response,
                    std::size_t& start) {
  Tokens seq = strip_pads(prompt);
  start = seq.size();
  if (seq.size() + response.size() > static_cast<std::size_t>(shape.context_len)) {
    throw LengthError("sequence of " + std::to_string(seq.size() + response.size()) +
                      " tokens exceeds context length " + std::to_string(shape.context_len));
  }
  seq.insert(seq.end(), response.begin(), response.end());
  return seq;
}

double log_prob_impl(const TokenPolicy& policy, const Tokens& prompt, const Tokens& response) {
  std::size_t start = 0;
  const Tokens seq = join_checked(policy.shape(), prompt, response, start);
  SequenceRunner runner(policy);
  return runner.run(seq, start, nullptr, 0.0);
}

}  // namespace

TokenPolicy::TokenPolicy(PolicyShape shape, std::string role, std::uint64_t seed,
                         double init_scale)
    : shape_(shape), role_(std::move(role)) {
  check_shape(shape_);
  const ParamLayout L(shape_);
  params_.assign(L.total, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = L.embed; i < L.w1; ++i) params_[i] = init_scale * normal(rng);
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(L.input_dim));
  for (std::size_t i = L.w1; i < L.b1; ++i) params_[i] = w1_scale * normal(rng);
  const double w2_scale = init_scale / std::sqrt(static_cast<double>(shape_.hidden));
  for (std::size_t i = L.w2; i < L.b2; ++i) params_[i] = w2_scale * normal(rng);
}

TokenPolicy TokenPolicy::zeros(PolicyShape shape, std::string role) {
  check_shape(shape);
  return from_params(shape, std::move(role), Vec(shape.num_params(), 0.0));
}

TokenPolicy TokenPolicy::from_params(PolicyShape shape, std::string role, Vec params) {
  check_shape(shape);
  if (params.size() != shape.num_params()) {
    throw ShapeError("parameter vector has " + std::to_string(params.size()) +
                     " entries, shape needs " + std::to_string(shape.num_params()));
  }
  TokenPolicy p;
  p.shape_ = shape;
  p.role_ = std::move(role);
  p.params_ = std::move(params);
  return p;
}

ReferenceSnapshot::ReferenceSnapshot(const TokenPolicy& source, int frozen_round)
    : frozen_(source), frozen_round_(frozen_round) {}

double log_prob(const TokenPolicy& policy, const Tokens& prompt, const Tokens& response) {
  return log_prob_impl(policy, prompt, response);
}

double log_prob(const ReferenceSnapshot& ref, const Tokens& prompt, const Tokens& response) {
  return log_prob_impl(ref.frozen_, prompt, response);
}

double accumulate_grad_log_prob(const TokenPolicy& policy, const Tokens& prompt,
                                const Tokens& response, double scale, Vec& grad) {
  if (grad.size() != policy.num_params()) {
    throw ShapeError("gradient buffer size mismatch");
  }
  std::size_t start = 0;
  const Tokens seq = join_checked(policy.shape(), prompt, response, start);
  SequenceRunner runner(policy);
  return runner.run(seq, start, &grad, scale);
}

Vec grad_log_prob(const TokenPolicy& policy, const Tokens& prompt, const Tokens& response) {
  Vec grad(policy.num_params(), 0.0);
  accumulate_grad_log_prob(policy, prompt, response, 1.0, grad);
  return grad;
}

Vec next_token_distribution(const TokenPolicy& policy, const Tokens& context) {
  const Tokens seq = strip_pads(context);
  if (seq.size() >= static_cast<std::size_t>(policy.shape().context_len)) {
    throw LengthError("context already fills the context window");
  }
  SequenceRunner runner(policy);
  runner.check_tokens(seq);
  runner.compute_scores(seq);
  runner.forward_step(seq, seq.size());
  return runner.probabilities();
}

Tokens generate(const TokenPolicy& policy, const Tokens& prompt, const DecodeConfig& cfg) {
  if (cfg.mode == DecodeMode::sampled && !(cfg.temperature > 0)) {
    throw ConfigError("sampled decoding needs temperature > 0");
  }
  Tokens seq = strip_pads(prompt);
  const auto ctx = static_cast<std::size_t>(policy.shape().context_len);
  if (seq.size() > ctx) {
    throw LengthError("prompt of " + std::to_string(seq.size()) + " tokens exceeds context length " +
                      std::to_string(ctx));
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SequenceRunner runner(policy);
  runner.check_tokens(seq);
  Tokens out;
  for (int step = 0; step < cfg.max_new_tokens && seq.size() < ctx; ++step) {
    runner.compute_scores(seq);
    runner.forward_step(seq, seq.size());
    const Vec& logits = runner.logits();
    TokenId next = Vocabulary::eos_id;
    if (cfg.mode == DecodeMode::greedy) {
      double best = -1e300;
      for (std::size_t v = 0; v < logits.size(); ++v) {
        if (static_cast<TokenId>(v) == Vocabulary::pad_id) continue;
        if (logits[v] > best) {
          best = logits[v];
          next = static_cast<TokenId>(v);
        }
      }
    } else {
      Vec w(logits.size(), 0.0);
      double mx = -1e300;
      for (std::size_t v = 1; v < logits.size(); ++v) mx = std::max(mx, logits[v] / cfg.temperature);
      double z = 0.0;
      for (std::size_t v = 1; v < logits.size(); ++v) {
        w[v] = std::exp(logits[v] / cfg.temperature - mx);
        z += w[v];
      }
      double r = unit(rng) * z;
      next = static_cast<TokenId>(logits.size() - 1);
      for (std::size_t v = 1; v < logits.size(); ++v) {
        r -= w[v];
        if (r < 0) {
          next = static_cast<TokenId>(v);
          break;
        }
      }
    }
    out.push_back(next);
    seq.push_back(next);
    if (next == Vocabulary::eos_id) break;
  }
  return out;
}

void apply_update(TokenPolicy& policy, const Vec& gradient, double lr) {
  Vec& p = policy.mutable_params();
  if (gradient.size() != p.size()) {
    throw ShapeError("gradient has " + std::to_string(gradient.size()) + " entries, policy has " +
                     std::to_string(p.size()));
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * gradient[i];
}

void AdamState::step_update(Vec& params, const Vec& grad, double lr) {
  if (grad.size() != params.size()) throw ShapeError("Adam gradient size mismatch");
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
    step = 0;
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
    if (lr != 0.0) params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

double mean_answer_cross_entropy(const TokenPolicy& policy, const std::vector<McqSample>& data,
                                 PromptMode mode, const Vocabulary& vocab,
                                 const McqSample* demo) {
  if (data.empty()) return 0.0;
  std::vector<SequencePair> pairs;
  pairs.reserve(data.size());
  std::size_t n_tokens = 0;
  for (const auto& s : data) {
    pairs.push_back({format_prompt(s, mode, demo, vocab), answer_response(s, vocab)});
    n_tokens += pairs.back().response.size();
  }
  const Vec lps = batch_log_probs(policy, pairs);
  double total = 0.0;
  for (double lp : lps) total -= lp;
  return total / static_cast<double>(n_tokens);
}

SftResult sft(TokenPolicy policy, const std::vector<McqSample>& data, const SftConfig& cfg,
              const Vocabulary& vocab, const McqSample* demo, int freeze_round) {
  if (cfg.epochs < 0 || cfg.lr < 0 || cfg.batch_size < 1) {
    throw ConfigError("sft needs epochs >= 0, lr >= 0, batch_size >= 1");
  }
  std::vector<SequencePair> pairs;
  pairs.reserve(data.size());
  for (const auto& s : data) {
    pairs.push_back({format_prompt(s, cfg.mode, demo, vocab), answer_response(s, vocab)});
  }
  Vec epoch_losses;
  if (cfg.lr > 0 && !pairs.empty()) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    AdamState adam;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      std::size_t tok_sum = 0;
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
        std::vector<SequencePair> batch;
        std::size_t n_tok = 0;
        for (std::size_t i = b; i < end; ++i) {
          batch.push_back(pairs[order[i]]);
          n_tok += pairs[order[i]].response.size();
        }
        Vec weights(batch.size(), -1.0 / static_cast<double>(n_tok));
        Vec lps;
        Vec grad = weighted_grad_sum(policy, batch, weights, &lps);
        double batch_loss = 0.0;
        for (double lp : lps) batch_loss -= lp;
        if (!std::isfinite(batch_loss) || !all_finite(grad)) {
          throw DivergenceError("sft diverged at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(b / static_cast<std::size_t>(cfg.batch_size)));
        }
        loss_sum += batch_loss;
        tok_sum += n_tok;
        adam.step_update(policy.mutable_params(), grad, cfg.lr);
      }
      epoch_losses.push_back(loss_sum / static_cast<double>(tok_sum));
    }
  }
  ReferenceSnapshot ref(policy, freeze_round);
  return SftResult{std::move(policy), std::move(ref), std::move(epoch_losses)};
}

}  // namespace fedr
