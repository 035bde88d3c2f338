#pragma once

// Brute-force click statistics from a truncated Fock expansion. Slow by
// design; used to cross-check the determinant kernel.

#include "bellsim/analytic.hpp"
#include "bellsim/core.hpp"

namespace bellsim::fock {

struct FockTruncation {
  int n_max = 6;            // photons per Schmidt pair (and per side)
  double tail_tol = 1e-12;  // discarded probability mass allowed
  bool adaptive = true;     // double n_max until the tail fits, up to kMaxPhotons
};

inline constexpr int kMaxPhotons = 20;

struct OracleResult {
  PatternDistribution dist;
  int n_max_used = 0;
  double tail_bound = 0.0;
};

/// Probability that more than `n_max` photons were emitted into the two
/// Schmidt pairs together.
double truncation_tail(double lambda, int n_max);

/// Throws NumericalError when the truncation cannot meet `tail_tol`.
OracleResult oracle_pattern_probs(const Settings& settings, const analytic::MeasurementModel& model,
                                  double phi, const FockTruncation& trunc = {});

OracleResult oracle_pattern_probs(const Settings& settings, const PhysicsParams& params,
                                  double delta_t, double phi, const FockTruncation& trunc = {});

}  // namespace bellsim::fock
