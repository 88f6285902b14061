#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fedr/bilevel.hpp"

using namespace fedr;

TEST_SUITE("bilevel") {
  TEST_CASE("toy constants") {
    const auto toy = BilevelToy::make(6, 5, 0.1, 3);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(toy.A);
    CHECK(es.eigenvalues().minCoeff() == doctest::Approx(1.0));
    CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(4.0));
    CHECK((toy.A - toy.A.transpose()).norm() < 1e-12);
    CHECK(toy.inner_step() == doctest::Approx(0.4));
    CHECK(toy.outer_grad(toy.optimum()).norm() < 1e-10);

    // Closed-form outer gradient against central differences of F.
    auto F = [&](const Eigen::VectorXd& psi) {
      return 0.5 * (toy.inner_optimum(psi) - toy.c).squaredNorm() + 0.5 * toy.mu * psi.squaredNorm();
    };
    const Eigen::VectorXd psi = Eigen::VectorXd::LinSpaced(6, -1, 1);
    const Eigen::VectorXd g = toy.outer_grad(psi);
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(6);
      e[i] = 1e-5;
      CHECK((F(psi + e) - F(psi - e)) / 2e-5 == doctest::Approx(g[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("noise-free run started at the optimum stays stationary") {
    const auto toy = BilevelToy::make(8, 8, 0.0, 2024);
    ConvergenceConfig cfg;
    cfg.rounds = 256;
    cfg.start_at_optimum = true;
    const auto r = bilevel_convergence_check(toy, cfg);
    for (double g : r.grad_norm_sq) CHECK(std::sqrt(g) < 1e-8);
    CHECK(r.stationary);
    CHECK(r.slope == 0.0);
  }

  TEST_CASE("noise-free running average is non-increasing") {
    const auto toy = BilevelToy::make(8, 8, 0.0, 7);
    ConvergenceConfig cfg;
    cfg.rounds = 512;
    const auto r = bilevel_convergence_check(toy, cfg);
    REQUIRE(r.running_avg.size() == 512);
    for (std::size_t t = 1; t < r.running_avg.size(); ++t)
      CHECK(r.running_avg[t] <= r.running_avg[t - 1] * (1 + 1e-12));
    CHECK(r.running_avg.back() < r.running_avg.front());
  }

  TEST_CASE("deterministic under a seed") {
    const auto toy = BilevelToy::make(4, 4, 0.1, 1);
    ConvergenceConfig cfg;
    cfg.rounds = 64;
    cfg.seed = 5;
    CHECK(bilevel_convergence_check(toy, cfg).grad_norm_sq ==
          bilevel_convergence_check(toy, cfg).grad_norm_sq);
  }

  TEST_CASE("slope fit recovers a power law") {
    Vec avg(4096);
    for (std::size_t t = 0; t < avg.size(); ++t) avg[t] = 3.0 / static_cast<double>(t + 1);
    CHECK(fit_loglog_slope(avg) == doctest::Approx(-1.0).epsilon(1e-9));
    for (std::size_t t = 0; t < avg.size(); ++t) avg[t] = std::pow(t + 1.0, -0.5);
    CHECK(fit_loglog_slope(avg) == doctest::Approx(-0.5).epsilon(1e-9));
  }

  TEST_CASE("step-size regime and divergence") {
    ConvergenceConfig cfg;
    cfg.rounds = 64;
    cfg.outer_step_scale = 0.6;
    CHECK_THROWS_AS(bilevel_convergence_check(BilevelToy::make(4, 4, 0.0, 1), cfg), ConfigError);
    cfg.outer_step_scale = 0.25;
    CHECK_THROWS_AS(bilevel_convergence_check(BilevelToy::make(4, 4, 1e7, 1), cfg), DivergenceError);
  }

  TEST_CASE("csv has one row per round") {
    const auto toy = BilevelToy::make(4, 4, 0.1, 1);
    ConvergenceConfig cfg;
    cfg.rounds = 32;
    const std::string csv = convergence_csv(bilevel_convergence_check(toy, cfg));
    CHECK(csv.rfind("round,grad_norm_sq_avg\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);
  }
}
