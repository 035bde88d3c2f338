#include <doctest.h>

#include <random>

#include "bellsim/analytic.hpp"
#include "bellsim/error.hpp"
#include "bellsim/fock_oracle.hpp"

using namespace bellsim;
using analytic::MeasurementModel;

TEST_CASE("truncation tail matches the pair-number distribution") {
  const double lam = 0.3;
  double kept = 0.0;
  for (int n = 0; n <= 5; ++n) kept += (1 - lam) * (1 - lam) * (n + 1) * std::pow(lam, n);
  CHECK(fock::truncation_tail(lam, 5) == doctest::Approx(1 - kept).epsilon(1e-12));
  CHECK(fock::truncation_tail(0.0, 0) == 0.0);
}

TEST_CASE("oracle agrees with the determinant kernel") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    MeasurementModel m;
    m.g = 0.3 * u(rng);
    m.eta_a = u(rng);
    m.eta_b = u(rng);
    m.p_dc = 0.01 * u(rng);
    const Settings s{6.3 * u(rng), 6.3 * u(rng), 6.3 * u(rng), 6.3 * u(rng)};
    const double phi = 6.3 * u(rng);
    const auto a = analytic::pattern_probs_fixed_phase(s, m, phi);
    const auto o = fock::oracle_pattern_probs(s, m, phi);
    CHECK(o.tail_bound <= 1e-12);
    for (int k = 0; k < 16; ++k) worst = std::max(worst, std::abs(a[k] - o.dist[k]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("oracle at the measured parameters") {
  PhysicsParams p;
  p.source.g = 0.047;
  p.detectors = {0.1, 2.54e-4, 9e-6};
  const auto o = fock::oracle_pattern_probs(Settings{}, p, 0.0, 0.0);
  const auto a = analytic::pattern_probs_fixed_phase(Settings{}, p, 0.0, 0.0);
  for (int k = 0; k < 16; ++k) CHECK(std::abs(a[k] - o.dist[k]) < 1e-10);
}

TEST_CASE("truncation control") {
  MeasurementModel m;
  m.g = 0.3;
  m.eta_a = m.eta_b = 0.5;
  fock::FockTruncation t;
  const auto adaptive = fock::oracle_pattern_probs(Settings{}, m, 0.0, t);
  CHECK(adaptive.n_max_used > 6);
  CHECK(adaptive.tail_bound <= 1e-12);

  t.adaptive = false;
  CHECK_THROWS_AS(fock::oracle_pattern_probs(Settings{}, m, 0.0, t), NumericalError);
  t.tail_tol = 1e-2;
  CHECK(fock::oracle_pattern_probs(Settings{}, m, 0.0, t).n_max_used == 6);

  fock::FockTruncation zero;
  zero.n_max = 0;
  zero.adaptive = false;
  CHECK_THROWS_AS(fock::oracle_pattern_probs(Settings{}, m, 0.0, zero), NumericalError);
  m.g = 0.0;
  CHECK(fock::oracle_pattern_probs(Settings{}, m, 0.0, zero).dist[0] == doctest::Approx(1.0));
}
