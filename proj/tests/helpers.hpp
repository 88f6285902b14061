#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fedr/common.hpp"

namespace fedr::testing {

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

// Largest relative error between analytic gradient entries and central
// differences of f, over `count` random coordinates.
inline double fd_check(Vec& params, const Vec& analytic, const std::function<double()>& f,
                       int count, std::uint64_t seed, double step = 1e-4) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    const std::size_t j = pick(rng);
    const double keep = params[j];
    params[j] = keep + step;
    const double up = f();
    params[j] = keep - step;
    const double down = f();
    params[j] = keep;
    const double fd = (up - down) / (2 * step);
    // Coordinates with gradients at round-off level carry no information.
    if (std::abs(fd) < 1e-7 && std::abs(analytic[j]) < 1e-7) continue;
    worst = std::max(worst, rel_err(fd, analytic[j]));
  }
  return worst;
}

inline Vec random_losses(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 5.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace fedr::testing
