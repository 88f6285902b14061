#pragma once

// Reward signals that supervise the sample filter: normalised drops in the
// exponentiated distillation loss across rounds and across batches.

#include <optional>
#include <span>

#include "fedr/common.hpp"

namespace fedr {

// Losses are clamped to this value before exponentiation.
inline constexpr double kRewardLossClamp = 30.0;

// (sum e^prev - sum e^curr) / max(sum e^prev, sum e^curr). Both lists must be
// non-empty; they may differ in length.
double round_reward(std::span<const double> prev_losses, std::span<const double> curr_losses);

// Same form over batch loss lists. A missing previous batch gives 0.
double batch_reward(std::optional<std::span<const double>> prev_batch_losses,
                    std::span<const double> curr_batch_losses);

// alpha * sigma(r_round) + (1 - alpha) * sigma(r_batch)
double total_reward(double r_round, double r_batch, double alpha);

// Loss history of one (learner, teacher) pair.
struct RewardTrace {
  double alpha = 0.5;
  std::optional<Vec> prev_round_losses;  // first-batch losses of the previous round
  std::optional<Vec> curr_round_losses;  // first-batch losses of this round
  std::optional<Vec> prev_batch_losses;

  // Records this batch's losses and returns (r_round, r_batch, r_total).
  struct Step {
    double r_round;
    double r_batch;
    double r_total;
  };
  Step observe(const Vec& batch_losses, bool first_batch_of_round);
  void start_round();
};

}  // namespace fedr
