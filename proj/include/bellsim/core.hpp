#pragma once

// Domain types shared by every module. Units: time in picoseconds, angles in
// radians, rates in 1/ps unless a name says otherwise.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace bellsim {

struct SourceParams {
  double g = 0.0;           // squeezing parameter
  double sigma_tech = 0.0;  // technical phase-noise std (rad)

  double lambda() const { const double t = std::tanh(g); return t * t; }
  double mean_photons() const { const double s = std::sinh(g); return s * s; }
};

struct DetectorParams {
  double eta_a = 0.0;   // Alice overall efficiency
  double eta_b0 = 0.0;  // Bob overall efficiency at zero delay
  double p_dc = 0.0;    // dark-count probability per window
};

struct VibrationParams {
  double tau_phonon = 3.78;  // ps
  double gamma_deph = 0.0;   // 1/ps
  double n_th = 1.7e-3;
};

struct PhysicsParams {
  SourceParams source;
  DetectorParams detectors;
  VibrationParams vibration;
};

/// Local rotation angles. The variable-retarder phases are theta = 2 alpha and
/// varphi = 2 beta.
struct Settings {
  double alpha = 0.0;
  double phi_s = 0.0;
  double beta = 0.0;
  double phi_a = 0.0;

  double theta() const { return 2.0 * alpha; }
  double varphi() const { return 2.0 * beta; }

  static Settings from_retarders(double theta, double varphi, double phi_s = 0.0,
                                 double phi_a = 0.0) {
    return Settings{theta / 2.0, phi_s, varphi / 2.0, phi_a};
  }

  friend bool operator==(const Settings&, const Settings&) = default;
};

/// 1/80.7 MHz in units of 0.1 ps.
inline constexpr std::uint64_t kDefaultRepPeriodDecips = 123916;

struct ExperimentPlan {
  // Repetition period as an exact rational: rep_period_num / rep_period_den ps.
  std::uint64_t rep_period_num = kDefaultRepPeriodDecips;
  std::uint32_t rep_period_den = 10;
  std::int64_t bin_separation_ps = 3000;
  std::int64_t window_halfwidth_ps = 1000;
  std::vector<double> delays_ps;
  std::vector<Settings> settings_list;
  std::uint64_t reps_per_setting = 0;
  std::uint64_t seed = 0;

  double rep_period_ps() const {
    return static_cast<double>(rep_period_num) / rep_period_den;
  }
  /// Sync timestamp of repetition k, rounded to the nearest ps.
  std::uint64_t sync_time(std::uint64_t k) const;
};

/// Four detectors in model order. Bit layout of a pattern index is
/// 8*A + 4*A_perp + 2*B + B_perp.
enum class Detector : int { kA = 0, kAPerp = 1, kB = 2, kBPerp = 3 };

struct ClickPattern {
  std::uint8_t bits = 0;

  constexpr ClickPattern() = default;
  constexpr explicit ClickPattern(std::uint8_t index) : bits(index & 0xF) {}
  constexpr ClickPattern(bool a, bool a_perp, bool b, bool b_perp)
      : bits(static_cast<std::uint8_t>(8 * a + 4 * a_perp + 2 * b + b_perp)) {}

  constexpr bool clicked(Detector d) const {
    return (bits >> (3 - static_cast<int>(d))) & 1U;
  }
  constexpr int index() const { return bits; }
};

struct PatternDistribution {
  std::array<double, 16> p{};

  double operator[](int i) const { return p[static_cast<std::size_t>(i)]; }
  double sum() const;
  /// Probability that every listed detector clicked (others unconstrained).
  double all_clicked(std::initializer_list<Detector> ds) const;
  /// Probability that none of the listed detectors clicked.
  double none_clicked(std::initializer_list<Detector> ds) const;
};

/// Maps model detectors onto the +/- outcome labels used by count data.
/// Default: Alice "+" is A, Bob "+" is B_perp.
struct DetectorMap {
  Detector alice_plus = Detector::kA;
  Detector alice_minus = Detector::kAPerp;
  Detector bob_plus = Detector::kBPerp;
  Detector bob_minus = Detector::kB;

  bool valid() const;
};

/// Outcome-labelled clicks of one repetition (channel-level view).
struct OutcomeClicks {
  bool a_plus = false, a_minus = false, b_plus = false, b_minus = false;
};

OutcomeClicks to_outcomes(ClickPattern pattern, const DetectorMap& map = {});

/// Coincidence and singles tallies for one (setting, delay) run.
struct CountsTable {
  std::uint64_t n_pp = 0, n_pm = 0, n_mp = 0, n_mm = 0;
  std::uint64_t n_bothA_p = 0, n_bothA_m = 0;  // both Alice detectors, by Bob's outcome
  std::uint64_t n_bothB_p = 0, n_bothB_m = 0;  // both Bob detectors, by Alice's outcome
  std::uint64_t n_bothAB = 0;
  std::uint64_t singles_Ap = 0, singles_Am = 0, singles_Bp = 0, singles_Bm = 0;
  std::uint64_t reps = 0;

  /// Adds one repetition's clicks.
  void record(const OutcomeClicks& c);
  CountsTable& operator+=(const CountsTable& o);
  friend bool operator==(const CountsTable&, const CountsTable&) = default;

  /// All rounds with at least one click on each side.
  std::uint64_t post_selected() const;
  /// Rounds where Alice's "+" and Bob's "+" detectors both clicked.
  std::uint64_t plus_plus_coincidences() const;
};

/// Time tag channels (outcome labelled).
enum class Channel : std::uint8_t { kSync = 0, kAPlus = 1, kAMinus = 2, kBPlus = 3, kBMinus = 4 };

struct TagRecord {
  std::uint64_t time_ps = 0;
  std::uint8_t channel = 0;

  friend bool operator==(const TagRecord&, const TagRecord&) = default;
};

/// Throws ConfigError naming the first offending field.
PhysicsParams validate(const PhysicsParams& params);
ExperimentPlan validate(const ExperimentPlan& plan);

/// Bob's efficiency after a write-read delay; throws NumericalError for
/// negative delays.
double eta_b_decay(double eta_b0, double delta_t, double tau);

/// Total phase std combining technical noise and pure dephasing.
double total_phase_sigma(const PhysicsParams& params, double delta_t);

inline constexpr double kTsirelson = 2.0 * std::numbers::sqrt2;

}  // namespace bellsim
