#include "fedr/bilevel.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace fedr {

namespace {

Eigen::VectorXd gaussian(int n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * nd(rng);
  return v;
}

}  // namespace

BilevelToy BilevelToy::make(int dim_psi, int dim_phi, double sigma, std::uint64_t seed,
                            double alpha, double L, double mu) {
  if (dim_psi < 1 || dim_phi < 1) throw ConfigError("bilevel toy dimensions must be >= 1");
  if (!(alpha > 0 && L >= alpha)) throw ConfigError("bilevel toy needs 0 < alpha <= L");
  if (!(mu > 0) || !(sigma >= 0)) throw ConfigError("bilevel toy needs mu > 0 and sigma >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd G(dim_phi, dim_phi);
  for (int i = 0; i < dim_phi; ++i)
    for (int j = 0; j < dim_phi; ++j) G(i, j) = nd(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
  Eigen::VectorXd eig(dim_phi);
  for (int i = 0; i < dim_phi; ++i) {
    eig[i] = dim_phi == 1 ? alpha : alpha + (L - alpha) * i / static_cast<double>(dim_phi - 1);
  }
  BilevelToy t;
  t.A = Q * eig.asDiagonal() * Q.transpose();
  t.A = 0.5 * (t.A + t.A.transpose());
  t.B.resize(dim_phi, dim_psi);
  for (int i = 0; i < dim_phi; ++i)
    for (int j = 0; j < dim_psi; ++j) t.B(i, j) = nd(rng) / std::sqrt(static_cast<double>(dim_psi));
  t.c = gaussian(dim_phi, 1.0, rng);
  t.mu = mu;
  t.sigma = sigma;
  t.alpha = alpha;
  t.L = L;
  const Eigen::MatrixXd M = t.A.ldlt().solve(t.B);
  const Eigen::MatrixXd H = M.transpose() * M;
  t.L0 = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff() + mu;
  return t;
}

Eigen::VectorXd BilevelToy::inner_optimum(const Eigen::VectorXd& psi) const {
  return A.ldlt().solve(B * psi);
}

Eigen::VectorXd BilevelToy::outer_grad(const Eigen::VectorXd& psi) const {
  const Eigen::VectorXd r = inner_optimum(psi) - c;
  return B.transpose() * A.ldlt().solve(r) + mu * psi;
}

Eigen::VectorXd BilevelToy::optimum() const {
  const Eigen::MatrixXd M = A.ldlt().solve(B);
  const Eigen::MatrixXd H =
      M.transpose() * M + mu * Eigen::MatrixXd::Identity(B.cols(), B.cols());
  return H.ldlt().solve(M.transpose() * c);
}

ConvergenceResult bilevel_convergence_check(const BilevelToy& toy, const ConvergenceConfig& cfg) {
  if (cfg.rounds < 1 || cfg.inner_steps < 0 || cfg.outer_steps < 1) {
    throw ConfigError("convergence check needs rounds >= 1, inner_steps >= 0, outer_steps >= 1");
  }
  if (!(cfg.outer_step_scale > 0 && cfg.outer_step_scale < 0.5)) {
    throw ConfigError("outer step must lie in (0, 1/(2 L0))");
  }
  std::mt19937_64 rng(cfg.seed);
  const int dpsi = static_cast<int>(toy.B.cols());
  const int dphi = static_cast<int>(toy.B.rows());
  Eigen::VectorXd psi = cfg.start_at_optimum ? toy.optimum() : gaussian(dpsi, 1.0, rng);
  Eigen::VectorXd phi = toy.inner_optimum(psi);
  const double eta = toy.inner_step();
  const double eta_outer = cfg.outer_step_scale / toy.L0;
  const auto A_ldlt = toy.A.ldlt();

  ConvergenceResult out;
  out.grad_norm_sq.reserve(static_cast<std::size_t>(cfg.rounds));
  out.running_avg.reserve(static_cast<std::size_t>(cfg.rounds));
  double sum = 0.0;
  for (int t = 0; t < cfg.rounds; ++t) {
    for (int s = 0; s < cfg.inner_steps; ++s) {
      Eigen::VectorXd g = toy.A * phi - toy.B * psi;
      if (toy.sigma > 0) g += gaussian(dphi, toy.sigma, rng);
      phi -= eta * g;
    }
    for (int s = 0; s < cfg.outer_steps; ++s) {
      // Implicit gradient with the current inner iterate standing in for phi*.
      Eigen::VectorXd g = toy.B.transpose() * A_ldlt.solve(phi - toy.c) + toy.mu * psi;
      if (toy.sigma > 0) g += gaussian(dpsi, toy.sigma, rng);
      psi -= eta_outer * g;
    }
    const double n2 = toy.outer_grad(psi).squaredNorm();
    if (!std::isfinite(n2) || std::sqrt(n2) > kDivergenceNorm) {
      throw DivergenceError("outer gradient norm diverged at round " + std::to_string(t + 1));
    }
    out.grad_norm_sq.push_back(n2);
    sum += n2;
    out.running_avg.push_back(sum / static_cast<double>(t + 1));
  }
  out.stationary = out.running_avg.back() < kStationaryAvg;
  out.slope = out.stationary ? 0.0 : fit_loglog_slope(out.running_avg);
  return out;
}

double fit_loglog_slope(const Vec& running_avg) {
  std::vector<double> xs, ys;
  for (std::size_t t = 16; t <= running_avg.size(); t *= 2) {
    const double v = running_avg[t - 1];
    if (!(v > 0)) continue;
    xs.push_back(std::log(static_cast<double>(t)));
    ys.push_back(std::log(v));
  }
  if (xs.size() < 2) throw ValidationError("need at least two positive checkpoints to fit a slope");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

std::string convergence_csv(const ConvergenceResult& r) {
  std::string out = "round,grad_norm_sq_avg\n";
  char buf[64];
  for (std::size_t i = 0; i < r.running_avg.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, r.running_avg[i]);
    out += buf;
  }
  return out;
}

}  // namespace fedr
