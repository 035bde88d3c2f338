#pragma once

// Correlators and CHSH values from counts, Poisson bootstrap errors, and the
// game-score confidence bound on CHSH.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bellsim/core.hpp"

namespace bellsim::stats {

/// Coincidences after the multi-click rule: a double click on Alice's side
/// counts as Alice "+", a double click on Bob's side as Bob "+".
struct FoldedCounts {
  std::uint64_t pp = 0, pm = 0, mp = 0, mm = 0;
  std::uint64_t total() const { return pp + pm + mp + mm; }
};

FoldedCounts fold(const CountsTable& c);

/// (n++ + n-- - n+- - n-+) / total. Throws NumericalError on an empty table.
double E_from_counts(const CountsTable& counts);

/// Four runs indexed by input bits, `tables[2 * x + y]`.
struct BellRunData {
  std::array<CountsTable, 4> tables{};
  std::array<double, 2> theta{0.0, std::numbers::pi / 2};                    // x -> theta
  std::array<double, 2> varphi{std::numbers::pi / 4, -std::numbers::pi / 4};  // y -> varphi

  CountsTable& at(int x, int y) { return tables[2 * x + y]; }
  const CountsTable& at(int x, int y) const { return tables[2 * x + y]; }
  bool mapping_valid() const { return theta[0] != theta[1] && varphi[0] != varphi[1]; }
};

/// S = sum over (x, y) of (-1)^{xy} E_xy.
double S_from_counts(const BellRunData& data);

/// 1 iff a xor b == x y.
int game_score(int a, int b, int x, int y);

struct GameTally {
  std::uint64_t wins = 0;
  std::uint64_t rounds = 0;
  double t_bar() const { return rounds ? static_cast<double>(wins) / rounds : 0.0; }
};

GameTally game_tally(const BellRunData& data);

struct ConfidenceResult {
  double t_bar = 0.0;
  double q_min = 0.0;
  double s_min = 0.0;
  double s_point = 0.0;  // 8 t_bar - 4
  double alpha = 0.0;
  std::uint64_t n = 0;
  std::uint64_t wins = 0;
};

/// q_min = I^{-1}_alpha(wins, losses + 1), s_min = 8 q_min - 4.
ConfidenceResult bell_confidence(const BellRunData& data, double alpha);
ConfidenceResult bell_confidence(std::uint64_t wins, std::uint64_t rounds, double alpha);

/// Regularized incomplete beta I_x(a, b).
double reg_inc_beta(double x, double a, double b);
/// x with I_x(a, b) = p.
double inverse_reg_inc_beta(double p, double a, double b);

struct BootstrapOptions {
  double rel_tol = 1e-5;
  std::uint64_t min_samples = 1000;
  std::uint64_t max_samples = 10'000'000;
  std::uint64_t stable_run = 100;  // consecutive samples within rel_tol
  std::uint64_t seed = 0;
};

struct BootstrapResult {
  double mean = 0.0;
  double std = 0.0;
  std::uint64_t samples = 0;    // accepted resamples
  std::uint64_t discarded = 0;  // statistic undefined on the resample
  bool converged = false;
  bool high_discard_rate() const {
    return samples + discarded > 0 && discarded * 100 > (samples + discarded);
  }
};

using CountStatistic = std::function<double(std::span<const std::uint64_t>)>;

/// Resamples every count as Poisson(count) and accumulates the statistic until
/// both the running mean and std change by less than rel_tol (relative) for
/// `stable_run` consecutive samples. A statistic that throws NumericalError
/// marks the resample as discarded.
BootstrapResult poisson_bootstrap(std::span<const std::uint64_t> counts,
                                  const CountStatistic& statistic,
                                  const BootstrapOptions& opts = {});

/// Convenience forms; `reps` is held fixed, all tallies are resampled.
BootstrapResult poisson_bootstrap(const CountsTable& counts,
                                  const std::function<double(const CountsTable&)>& statistic,
                                  const BootstrapOptions& opts = {});
BootstrapResult poisson_bootstrap(const BellRunData& data,
                                  const std::function<double(const BellRunData&)>& statistic,
                                  const BootstrapOptions& opts = {});

std::vector<std::uint64_t> flatten(const CountsTable& c);
CountsTable unflatten(std::span<const std::uint64_t> v, std::uint64_t reps);
inline constexpr std::size_t kCountFields = 13;

}  // namespace bellsim::stats
