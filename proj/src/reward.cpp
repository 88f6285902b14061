#include "fedr/reward.hpp"

#include <algorithm>

namespace fedr {

namespace {

double exp_sum(std::span<const double> losses) {
  double s = 0.0;
  for (double l : losses) {
    if (!std::isfinite(l)) throw ValidationError("non-finite loss in reward trace");
    s += std::exp(std::min(l, kRewardLossClamp));
  }
  return s;
}

double normalised_drop(std::span<const double> prev, std::span<const double> curr) {
  const double m = exp_sum(prev);
  const double n = exp_sum(curr);
  return (m - n) / std::max(m, n);
}

}  // namespace

double round_reward(std::span<const double> prev_losses, std::span<const double> curr_losses) {
  if (prev_losses.empty() || curr_losses.empty()) {
    throw ValidationError("round reward needs non-empty loss lists");
  }
  return normalised_drop(prev_losses, curr_losses);
}

double batch_reward(std::optional<std::span<const double>> prev_batch_losses,
                    std::span<const double> curr_batch_losses) {
  if (curr_batch_losses.empty()) {
    throw ValidationError("batch reward needs a non-empty current batch");
  }
  if (!prev_batch_losses || prev_batch_losses->empty()) {
    return 0.0;
  }
  return normalised_drop(*prev_batch_losses, curr_batch_losses);
}

double total_reward(double r_round, double r_batch, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must be in [0,1]");
  }
  return alpha * sigmoid(r_round) + (1.0 - alpha) * sigmoid(r_batch);
}

void RewardTrace::start_round() {
  if (curr_round_losses) prev_round_losses = std::move(curr_round_losses);
  curr_round_losses.reset();
}

RewardTrace::Step RewardTrace::observe(const Vec& batch_losses, bool first_batch_of_round) {
  if (first_batch_of_round) curr_round_losses = batch_losses;
  Step s{};
  s.r_round = (prev_round_losses && curr_round_losses)
                  ? round_reward(*prev_round_losses, *curr_round_losses)
                  : 0.0;
  std::optional<std::span<const double>> prev;
  if (prev_batch_losses) prev = std::span<const double>(*prev_batch_losses);
  s.r_batch = batch_reward(prev, batch_losses);
  s.r_total = total_reward(s.r_round, s.r_batch, alpha);
  prev_batch_losses = batch_losses;
  return s;
}

}  // namespace fedr
