#pragma once

// Learnability-aware sample filter: an exploitation network regressing the
// observed reward, an exploration network regressing its residual from the
// exploitation network's hidden states, and the selection rules built on the
// combined estimate r_hat = U_p(x) + lambda * U_q(h_p(x)).

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedr/common.hpp"
#include "fedr/corpus.hpp"
#include "fedr/policy.hpp"

namespace fedr {

// Fully connected net with residual blocks:
//   h_0 = tanh(P x + p),  h_l = h_{l-1} + tanh(W_l h_{l-1} + b_l),  y = w . h_L + c
// The hidden representation handed to the exploration net is [h_1; ...; h_L].
class ResidualMlp {
 public:
  ResidualMlp() = default;
  ResidualMlp(int input_dim, int width, int blocks, std::uint64_t seed, double out_scale = 0.1);
  static ResidualMlp zeros(int input_dim, int width, int blocks);

  int input_dim() const { return input_dim_; }
  int width() const { return width_; }
  int blocks() const { return blocks_; }
  int hidden_dim() const { return width_ * blocks_; }

  struct Output {
    double value = 0.0;
    Vec hidden;  // concatenated residual block outputs
  };
  Output forward(std::span<const double> x) const;

  // Gradient of (1/2n) sum (y_i - t_i)^2; returns the loss.
  double loss_and_grad(const std::vector<Vec>& inputs, std::span<const double> targets,
                       Vec* grad) const;

  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }
  static std::size_t param_count(int input_dim, int width, int blocks);

 private:
  struct Offsets {
    std::size_t proj, proj_b, blocks, out_w, out_b, total;
  };
  Offsets offsets() const;
  void check_input(std::span<const double> x) const;

  int input_dim_ = 0;
  int width_ = 0;
  int blocks_ = 0;
  Vec params_;
};

enum class SelectionMode { threshold, top_k };

struct SelectionConfig {
  SelectionMode mode = SelectionMode::threshold;
  double threshold = 0.5;
  int min_count = 4;
  int max_count = -1;  // negative: no upper clamp (pool size)
  int top_k = 16;
};

struct FilterConfig {
  int feature_dim = 64;
  int width = 64;
  int blocks = 2;
  int explore_width = 64;
  int explore_blocks = 2;
  double lambda = 0.5;
  double lr = 3e-4;
  int epochs = 10;
  SelectionConfig selection;
};

struct FilterState {
  FilterState(const FilterConfig& cfg, std::string learner, std::string teacher,
              std::uint64_t seed);
  FilterState(ResidualMlp exploit_net, ResidualMlp explore_net, double lambda,
              SelectionConfig selection, std::string learner, std::string teacher);

  ResidualMlp exploit;
  ResidualMlp explore;
  AdamState exploit_opt;
  AdamState explore_opt;
  double lambda = 0.0;
  SelectionConfig selection;
  std::string learner;
  std::string teacher;
};

struct ExploitOutput {
  double prediction = 0.0;
  Vec hidden;
};

ExploitOutput exploit_forward(const FilterState& state, const FeatureVector& x);

// Adam steps on the exploitation loss. `targets` holds either one value
// broadcast to every sample or one value per sample. Returns the final loss.
double train_exploit(FilterState& state, const std::vector<FeatureVector>& batch,
                     std::span<const double> targets, double lr, int steps);

// Adam steps on the exploration loss over precomputed exploit hidden states.
double train_explore(FilterState& state, const std::vector<Vec>& hidden,
                     std::span<const double> targets, double lr, int steps);

double exploit_loss(const FilterState& state, const std::vector<FeatureVector>& batch,
                    std::span<const double> targets);
double explore_loss(const FilterState& state, const std::vector<Vec>& hidden,
                    std::span<const double> targets);

struct FilterUpdate {
  double exploit_loss = 0.0;
  double explore_loss = 0.0;
};

// One filter update on an observed batch reward: hidden states are taken with
// the pre-update exploit net, the exploit net is trained towards r_total, and
// the explore net is trained on r_total minus the post-update prediction.
FilterUpdate update_filter(FilterState& state, const std::vector<FeatureVector>& batch,
                           double r_total, double lr, int steps);

double estimate(const FilterState& state, const FeatureVector& x);
Vec estimate_batch(const FilterState& state, std::span<const FeatureVector> xs);
Vec estimate_batch_serial(const FilterState& state, std::span<const FeatureVector> xs);

using ScoredId = std::pair<std::string, double>;

// Selected ids ordered by descending estimate, ties by ascending id.
std::vector<std::string> select(const SelectionConfig& cfg, const std::vector<ScoredId>& estimates);

// k-means++ seeding, 50 Lloyd iterations, then the id nearest to each
// centroid (distinct ids; ties by ascending id).
std::vector<std::string> cold_start(const std::vector<std::string>& ids,
                                    const std::vector<FeatureVector>& features, int k,
                                    std::uint64_t seed);

inline constexpr int kKmeansIterations = 50;

}  // namespace fedr
