#pragma once

// Monte Carlo generation of click patterns, aggregated into counts tables or
// written out as detector time-tag streams.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "bellsim/analytic.hpp"
#include "bellsim/core.hpp"
#include "bellsim/tagproc.hpp"

namespace bellsim::mc {

enum class PhaseSampling {
  // iid draws from the phase-averaged pattern distribution; identical in law
  // to drawing phi per repetition and then a pattern at that phi
  kMixture,
  // explicit phi per repetition, patterns interpolated on a phase grid
  kPerRepetition,
};

struct SimOptions {
  PhaseSampling sampling = PhaseSampling::kMixture;
  unsigned threads = 0;                       // 0: hardware concurrency
  std::uint64_t block_reps = std::uint64_t{1} << 22;
  int phase_grid_points = 4096;
  double phase_grid_span = 6.0;               // grid covers +-span * sigma
  DetectorMap map;
};

using PatternTally = std::array<std::uint64_t, 16>;

struct SimCell {
  std::size_t setting_index = 0;
  std::size_t delay_index = 0;
  Settings settings;
  double delay_ps = 0.0;
  PatternTally tally{};
  CountsTable counts;
};

struct SimOutcome {
  std::vector<SimCell> cells;  // setting-major order
};

/// Counts table equivalent to a pattern tally under `map`.
CountsTable counts_from_tally(const PatternTally& tally, const DetectorMap& map = {});

/// One run per (setting, delay) of the plan. Deterministic in (plan, params,
/// seed); independent of thread count.
SimOutcome simulate_counts(const ExperimentPlan& plan, const PhysicsParams& params,
                           std::uint64_t seed, const SimOptions& opts = {});

/// Visits every repetition with at least one click, in increasing order.
/// `forced` replaces the sampled distribution (tests).
void for_each_click(const ExperimentPlan& plan, const PhysicsParams& params, std::uint64_t seed,
                    std::size_t setting_index, std::size_t delay_index, const SimOptions& opts,
                    const std::function<void(std::uint64_t rep, ClickPattern pattern)>& visit,
                    const PatternDistribution* forced = nullptr);

struct TagSimOptions {
  double jitter_std_ps = 0.0;
  bool emit_syncs = true;  // false: clicks only, for header-period reduction
  SimOptions sim;
  const PatternDistribution* forced = nullptr;
};

struct TagSimReport {
  std::uint64_t records = 0;
  std::uint64_t syncs = 0;
  std::uint64_t clicks = 0;
};

/// Writes sync records at the plan's sync times and one click per clicked
/// detector at sync + bin_separation + N(0, jitter^2), kept inside its
/// repetition. Uses the same pattern stream as simulate_counts.
TagSimReport simulate_tags(const ExperimentPlan& plan, const PhysicsParams& params,
                           std::uint64_t seed, std::size_t setting_index, std::size_t delay_index,
                           tags::TagSink& sink, const TagSimOptions& opts = {});

}  // namespace bellsim::mc
