#include "fedr/filter.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace fedr {

// --- ResidualMlp -------------------------------------------------------------

std::size_t ResidualMlp::param_count(int input_dim, int width, int blocks) {
  const auto d = static_cast<std::size_t>(input_dim);
  const auto h = static_cast<std::size_t>(width);
  const auto L = static_cast<std::size_t>(blocks);
  return h * d + h + L * (h * h + h) + h + 1;
}

ResidualMlp::Offsets ResidualMlp::offsets() const {
  const auto d = static_cast<std::size_t>(input_dim_);
  const auto h = static_cast<std::size_t>(width_);
  const auto L = static_cast<std::size_t>(blocks_);
  Offsets o{};
  o.proj = 0;
  o.proj_b = h * d;
  o.blocks = o.proj_b + h;
  o.out_w = o.blocks + L * (h * h + h);
  o.out_b = o.out_w + h;
  o.total = o.out_b + 1;
  return o;
}

ResidualMlp ResidualMlp::zeros(int input_dim, int width, int blocks) {
  if (input_dim < 1 || width < 1 || blocks < 1) throw ConfigError("invalid residual MLP shape");
  ResidualMlp n;
  n.input_dim_ = input_dim;
  n.width_ = width;
  n.blocks_ = blocks;
  n.params_.assign(param_count(input_dim, width, blocks), 0.0);
  return n;
}

ResidualMlp::ResidualMlp(int input_dim, int width, int blocks, std::uint64_t seed,
                         double out_scale) {
  *this = zeros(input_dim, width, blocks);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Offsets o = offsets();
  const auto h = static_cast<std::size_t>(width_);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(input_dim_));
  for (std::size_t i = o.proj; i < o.proj_b; ++i) params_[i] = in_scale * normal(rng);
  const double blk_scale = 0.5 / std::sqrt(static_cast<double>(width_));
  for (int l = 0; l < blocks_; ++l) {
    const std::size_t base = o.blocks + static_cast<std::size_t>(l) * (h * h + h);
    for (std::size_t i = 0; i < h * h; ++i) params_[base + i] = blk_scale * normal(rng);
  }
  const double w_scale = out_scale / std::sqrt(static_cast<double>(width_));
  for (std::size_t i = o.out_w; i < o.out_b; ++i) params_[i] = w_scale * normal(rng);
}

void ResidualMlp::check_input(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(input_dim_)) {
    throw ShapeError("net expects input of dimension " + std::to_string(input_dim_) + ", got " +
                     std::to_string(x.size()));
  }
}

ResidualMlp::Output ResidualMlp::forward(std::span<const double> x) const {
  check_input(x);
  const Offsets o = offsets();
  const auto d = static_cast<std::size_t>(input_dim_);
  const auto h = static_cast<std::size_t>(width_);
  Vec cur(h);
  for (std::size_t i = 0; i < h; ++i) {
    double acc = params_[o.proj_b + i];
    const double* row = params_.data() + o.proj + i * d;
    for (std::size_t c = 0; c < d; ++c) acc += row[c] * x[c];
    cur[i] = std::tanh(acc);
  }
  Output out;
  out.hidden.reserve(static_cast<std::size_t>(hidden_dim()));
  Vec next(h);
  for (int l = 0; l < blocks_; ++l) {
    const std::size_t base = o.blocks + static_cast<std::size_t>(l) * (h * h + h);
    for (std::size_t i = 0; i < h; ++i) {
      double acc = params_[base + h * h + i];
      const double* row = params_.data() + base + i * h;
      for (std::size_t c = 0; c < h; ++c) acc += row[c] * cur[c];
      next[i] = cur[i] + std::tanh(acc);
    }
    cur.swap(next);
    out.hidden.insert(out.hidden.end(), cur.begin(), cur.end());
  }
  double y = params_[o.out_b];
  for (std::size_t i = 0; i < h; ++i) y += params_[o.out_w + i] * cur[i];
  out.value = y;
  return out;
}

double ResidualMlp::loss_and_grad(const std::vector<Vec>& inputs, std::span<const double> targets,
                                  Vec* grad) const {
  if (inputs.empty()) throw ValidationError("filter training needs a non-empty batch");
  if (targets.size() != 1 && targets.size() != inputs.size()) {
    throw ShapeError("targets must be a single broadcast value or one per sample");
  }
  const Offsets o = offsets();
  const auto d = static_cast<std::size_t>(input_dim_);
  const auto h = static_cast<std::size_t>(width_);
  const auto L = static_cast<std::size_t>(blocks_);
  const double n = static_cast<double>(inputs.size());
  if (grad) grad->assign(o.total, 0.0);

  double loss = 0.0;
  std::vector<Vec> acts(L + 1, Vec(h));  // h_0 .. h_L
  std::vector<Vec> pre_t(L, Vec(h));     // tanh outputs inside each block
  Vec dcur(h), dprev(h);
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const Vec& x = inputs[s];
    check_input(x);
    const double t = targets.size() == 1 ? targets[0] : targets[s];
    for (std::size_t i = 0; i < h; ++i) {
      double acc = params_[o.proj_b + i];
      const double* row = params_.data() + o.proj + i * d;
      for (std::size_t c = 0; c < d; ++c) acc += row[c] * x[c];
      acts[0][i] = std::tanh(acc);
    }
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t base = o.blocks + l * (h * h + h);
      for (std::size_t i = 0; i < h; ++i) {
        double acc = params_[base + h * h + i];
        const double* row = params_.data() + base + i * h;
        for (std::size_t c = 0; c < h; ++c) acc += row[c] * acts[l][c];
        pre_t[l][i] = std::tanh(acc);
        acts[l + 1][i] = acts[l][i] + pre_t[l][i];
      }
    }
    double y = params_[o.out_b];
    for (std::size_t i = 0; i < h; ++i) y += params_[o.out_w + i] * acts[L][i];
    const double r = y - t;
    loss += 0.5 * r * r / n;
    if (!grad) continue;

    Vec& g = *grad;
    const double dy = r / n;
    g[o.out_b] += dy;
    for (std::size_t i = 0; i < h; ++i) {
      g[o.out_w + i] += dy * acts[L][i];
      dcur[i] = dy * params_[o.out_w + i];
    }
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t base = o.blocks + l * (h * h + h);
      dprev = dcur;  // identity path
      for (std::size_t i = 0; i < h; ++i) {
        const double dz = dcur[i] * (1.0 - pre_t[l][i] * pre_t[l][i]);
        if (dz == 0.0) continue;
        g[base + h * h + i] += dz;
        double* grow = g.data() + base + i * h;
        const double* row = params_.data() + base + i * h;
        for (std::size_t c = 0; c < h; ++c) {
          grow[c] += dz * acts[l][c];
          dprev[c] += dz * row[c];
        }
      }
      dcur.swap(dprev);
    }
    for (std::size_t i = 0; i < h; ++i) {
      const double dz = dcur[i] * (1.0 - acts[0][i] * acts[0][i]);
      if (dz == 0.0) continue;
      g[o.proj_b + i] += dz;
      double* grow = g.data() + o.proj + i * d;
      for (std::size_t c = 0; c < d; ++c) grow[c] += dz * x[c];
    }
  }
  return loss;
}

// --- FilterState -------------------------------------------------------------

FilterState::FilterState(const FilterConfig& cfg, std::string learner_id, std::string teacher_id,
                         std::uint64_t seed)
    : FilterState(ResidualMlp(cfg.feature_dim, cfg.width, cfg.blocks, seed),
                  ResidualMlp(cfg.width * cfg.blocks, cfg.explore_width, cfg.explore_blocks,
                              seed ^ 0x9e3779b97f4a7c15ULL, 1.0),
                  cfg.lambda, cfg.selection, std::move(learner_id), std::move(teacher_id)) {}

FilterState::FilterState(ResidualMlp exploit_net, ResidualMlp explore_net, double lam,
                         SelectionConfig sel, std::string learner_id, std::string teacher_id)
    : exploit(std::move(exploit_net)),
      explore(std::move(explore_net)),
      lambda(lam),
      selection(sel),
      learner(std::move(learner_id)),
      teacher(std::move(teacher_id)) {
  if (explore.input_dim() != exploit.hidden_dim()) {
    throw ShapeError("explore net input width " + std::to_string(explore.input_dim()) +
                     " must equal the exploit net's concatenated hidden width " +
                     std::to_string(exploit.hidden_dim()));
  }
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (selection.mode == SelectionMode::top_k && selection.top_k < 1) {
    throw ConfigError("top_k must be >= 1");
  }
}

ExploitOutput exploit_forward(const FilterState& state, const FeatureVector& x) {
  auto out = state.exploit.forward(x.values);
  return ExploitOutput{out.value, std::move(out.hidden)};
}

namespace {

std::vector<Vec> feature_values(const std::vector<FeatureVector>& batch) {
  std::vector<Vec> xs;
  xs.reserve(batch.size());
  for (const auto& f : batch) xs.push_back(f.values);
  return xs;
}

double train_net(ResidualMlp& net, AdamState& opt, const std::vector<Vec>& xs,
                 std::span<const double> targets, double lr, int steps, const char* what) {
  Vec grad;
  for (int s = 0; s < steps; ++s) {
    const double loss = net.loss_and_grad(xs, targets, &grad);
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw DivergenceError(std::string(what) + " training diverged at step " +
                            std::to_string(s));
    }
    opt.step_update(net.mutable_params(), grad, lr);
  }
  const double final_loss = net.loss_and_grad(xs, targets, nullptr);
  if (!std::isfinite(final_loss)) {
    throw DivergenceError(std::string(what) + " training produced a non-finite loss");
  }
  return final_loss;
}

}  // namespace

double exploit_loss(const FilterState& state, const std::vector<FeatureVector>& batch,
                    std::span<const double> targets) {
  return state.exploit.loss_and_grad(feature_values(batch), targets, nullptr);
}

double explore_loss(const FilterState& state, const std::vector<Vec>& hidden,
                    std::span<const double> targets) {
  return state.explore.loss_and_grad(hidden, targets, nullptr);
}

double train_exploit(FilterState& state, const std::vector<FeatureVector>& batch,
                     std::span<const double> targets, double lr, int steps) {
  return train_net(state.exploit, state.exploit_opt, feature_values(batch), targets, lr, steps,
                   "exploit net");
}

double train_explore(FilterState& state, const std::vector<Vec>& hidden,
                     std::span<const double> targets, double lr, int steps) {
  return train_net(state.explore, state.explore_opt, hidden, targets, lr, steps, "explore net");
}

FilterUpdate update_filter(FilterState& state, const std::vector<FeatureVector>& batch,
                           double r_total, double lr, int steps) {
  std::vector<Vec> hidden;
  hidden.reserve(batch.size());
  for (const auto& x : batch) hidden.push_back(exploit_forward(state, x).hidden);

  FilterUpdate out;
  const double target = r_total;
  out.exploit_loss = train_exploit(state, batch, std::span<const double>(&target, 1), lr, steps);

  Vec residual(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    residual[i] = r_total - exploit_forward(state, batch[i]).prediction;
  }
  out.explore_loss = train_explore(state, hidden, residual, lr, steps);
  return out;
}

double estimate(const FilterState& state, const FeatureVector& x) {
  const auto p = state.exploit.forward(x.values);
  if (state.lambda == 0.0) return p.value;
  return p.value + state.lambda * state.explore.forward(p.hidden).value;
}

Vec estimate_batch_serial(const FilterState& state, std::span<const FeatureVector> xs) {
  Vec out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = estimate(state, xs[i]);
  return out;
}

Vec estimate_batch(const FilterState& state, std::span<const FeatureVector> xs) {
  Vec out(xs.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  bool failed = false;
#pragma omp parallel for schedule(static) reduction(|| : failed)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (xs[static_cast<std::size_t>(i)].dim() != static_cast<std::size_t>(state.exploit.input_dim())) {
      failed = true;
      continue;
    }
    out[static_cast<std::size_t>(i)] = estimate(state, xs[static_cast<std::size_t>(i)]);
  }
  if (failed) throw ShapeError("feature dimension does not match the filter input");
  return out;
}

// --- selection ---------------------------------------------------------------

std::vector<std::string> select(const SelectionConfig& cfg, const std::vector<ScoredId>& estimates) {
  std::vector<ScoredId> ranked = estimates;
  std::sort(ranked.begin(), ranked.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::size_t count = 0;
  if (cfg.mode == SelectionMode::top_k) {
    if (cfg.top_k < 1) throw ConfigError("top_k must be >= 1");
    count = std::min(ranked.size(), static_cast<std::size_t>(cfg.top_k));
  } else {
    for (const auto& [id, r] : ranked) {
      if (r > cfg.threshold) ++count;
    }
    const std::size_t lo = static_cast<std::size_t>(std::max(0, cfg.min_count));
    count = std::max(count, std::min(lo, ranked.size()));
    if (cfg.max_count >= 0) count = std::min(count, static_cast<std::size_t>(cfg.max_count));
  }
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(ranked[i].first);
  return out;
}

// --- cold start --------------------------------------------------------------

namespace {

double sq_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<std::string> cold_start(const std::vector<std::string>& ids,
                                    const std::vector<FeatureVector>& features, int k,
                                    std::uint64_t seed) {
  if (ids.size() != features.size()) throw ShapeError("one feature vector per id required");
  if (k < 0 || static_cast<std::size_t>(k) > ids.size()) {
    throw ValidationError("cold start asks for " + std::to_string(k) + " prototypes from a pool of " +
                          std::to_string(ids.size()));
  }
  if (k == 0) return {};
  const std::size_t n = ids.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Vec> centers;
  centers.push_back(features[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)].values);
  Vec d2(n);
  while (centers.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(features[i].values, c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    } else {
      double r = unit(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(features[pick].values);
  }

  const std::size_t dim = features.front().values.size();
  std::vector<std::size_t> assign(n, 0);
  for (int it = 0; it < kKmeansIterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double dd = sq_dist(features[i].values, centers[c]);
        if (dd < best) {
          best = dd;
          assign[i] = c;
        }
      }
    }
    std::vector<Vec> sums(centers.size(), Vec(dim, 0.0));
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i]][j] += features[i].values[j];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) {
        centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
      }
    }
  }

  std::vector<bool> taken(n, false);
  std::vector<std::string> out;
  for (const auto& c : centers) {
    std::size_t best_i = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double dd = sq_dist(features[i].values, c);
      if (dd < best || (dd == best && best_i < n && ids[i] < ids[best_i])) {
        best = dd;
        best_i = i;
      }
    }
    taken[best_i] = true;
    out.push_back(ids[best_i]);
  }
  return out;
}

}  // namespace fedr
