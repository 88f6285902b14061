#pragma once

// Quadratic bilevel toy with known constants, used as an empirical check of
// the O(1/sqrt(T)) stationarity rate of the two-loop stochastic scheme.
//
//   inner  g(phi, psi) = 1/2 phi' A phi - phi' B psi       phi*(psi) = A^-1 B psi
//   outer  F(psi)      = 1/2 |phi*(psi) - c|^2 + mu/2 |psi|^2

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "fedr/common.hpp"

namespace fedr {

struct BilevelToy {
  Eigen::MatrixXd A;  // symmetric positive definite
  Eigen::MatrixXd B;
  Eigen::VectorXd c;
  double mu = 0.1;
  double sigma = 0.0;  // std of additive Gaussian noise on every stochastic gradient

  double alpha = 0.0;  // lambda_min(A): inner strong convexity
  double L = 0.0;      // lambda_max(A): inner smoothness
  double L0 = 0.0;     // smoothness of F

  // A has eigenvalues evenly spread over [alpha, L].
  static BilevelToy make(int dim_psi, int dim_phi, double sigma, std::uint64_t seed,
                         double alpha = 1.0, double L = 4.0, double mu = 0.1);

  Eigen::VectorXd inner_optimum(const Eigen::VectorXd& psi) const;
  Eigen::VectorXd outer_grad(const Eigen::VectorXd& psi) const;
  Eigen::VectorXd optimum() const;
  double inner_step() const { return 2.0 / (L + alpha); }
};

struct ConvergenceConfig {
  int rounds = 4096;            // T
  int inner_steps = 5;          // tau
  int outer_steps = 1;          // tau'
  double outer_step_scale = 0.25;  // eta' = scale / L0; must be < 0.5
  bool start_at_optimum = false;
  std::uint64_t seed = 0;
};

struct ConvergenceResult {
  Vec grad_norm_sq;      // |grad F(psi_t)|^2 after each round
  Vec running_avg;       // mean of grad_norm_sq[0..t]
  double slope = 0.0;    // log-log slope of running_avg over power-of-two checkpoints
  bool stationary = false;  // running average indistinguishable from zero
};

ConvergenceResult bilevel_convergence_check(const BilevelToy& toy, const ConvergenceConfig& cfg);

// Least-squares slope of log(avg[t-1]) against log(t) for t = 16, 32, ... <= T.
double fit_loglog_slope(const Vec& running_avg);

std::string convergence_csv(const ConvergenceResult& r);

inline constexpr double kDivergenceNorm = 1e6;
inline constexpr double kStationaryAvg = 1e-16;

}  // namespace fedr
