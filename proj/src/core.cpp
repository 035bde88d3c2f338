#include "bellsim/core.hpp"

#include <numeric>
#include <set>

#include "bellsim/error.hpp"

namespace bellsim {

std::uint64_t ExperimentPlan::sync_time(std::uint64_t k) const {
  const auto num = static_cast<unsigned __int128>(k) * rep_period_num + rep_period_den / 2;
  return static_cast<std::uint64_t>(num / rep_period_den);
}

double PatternDistribution::sum() const {
  return std::accumulate(p.begin(), p.end(), 0.0);
}

double PatternDistribution::all_clicked(std::initializer_list<Detector> ds) const {
  double s = 0.0;
  for (int i = 0; i < 16; ++i) {
    const ClickPattern pat(static_cast<std::uint8_t>(i));
    bool ok = true;
    for (Detector d : ds) ok = ok && pat.clicked(d);
    if (ok) s += p[i];
  }
  return s;
}

double PatternDistribution::none_clicked(std::initializer_list<Detector> ds) const {
  double s = 0.0;
  for (int i = 0; i < 16; ++i) {
    const ClickPattern pat(static_cast<std::uint8_t>(i));
    bool ok = true;
    for (Detector d : ds) ok = ok && !pat.clicked(d);
    if (ok) s += p[i];
  }
  return s;
}

bool DetectorMap::valid() const {
  const std::set<Detector> alice{alice_plus, alice_minus};
  const std::set<Detector> bob{bob_plus, bob_minus};
  auto is_alice = [](Detector d) { return d == Detector::kA || d == Detector::kAPerp; };
  return alice.size() == 2 && bob.size() == 2 && is_alice(alice_plus) && is_alice(alice_minus) &&
         !is_alice(bob_plus) && !is_alice(bob_minus);
}

OutcomeClicks to_outcomes(ClickPattern pattern, const DetectorMap& map) {
  return OutcomeClicks{pattern.clicked(map.alice_plus), pattern.clicked(map.alice_minus),
                       pattern.clicked(map.bob_plus), pattern.clicked(map.bob_minus)};
}

void CountsTable::record(const OutcomeClicks& c) {
  ++reps;
  singles_Ap += c.a_plus;
  singles_Am += c.a_minus;
  singles_Bp += c.b_plus;
  singles_Bm += c.b_minus;

  const bool alice = c.a_plus || c.a_minus;
  const bool bob = c.b_plus || c.b_minus;
  if (!alice || !bob) return;

  const bool both_a = c.a_plus && c.a_minus;
  const bool both_b = c.b_plus && c.b_minus;
  if (both_a && both_b) {
    ++n_bothAB;
  } else if (both_a) {
    ++(c.b_plus ? n_bothA_p : n_bothA_m);
  } else if (both_b) {
    ++(c.a_plus ? n_bothB_p : n_bothB_m);
  } else if (c.a_plus) {
    ++(c.b_plus ? n_pp : n_pm);
  } else {
    ++(c.b_plus ? n_mp : n_mm);
  }
}

CountsTable& CountsTable::operator+=(const CountsTable& o) {
  n_pp += o.n_pp;
  n_pm += o.n_pm;
  n_mp += o.n_mp;
  n_mm += o.n_mm;
  n_bothA_p += o.n_bothA_p;
  n_bothA_m += o.n_bothA_m;
  n_bothB_p += o.n_bothB_p;
  n_bothB_m += o.n_bothB_m;
  n_bothAB += o.n_bothAB;
  singles_Ap += o.singles_Ap;
  singles_Am += o.singles_Am;
  singles_Bp += o.singles_Bp;
  singles_Bm += o.singles_Bm;
  reps += o.reps;
  return *this;
}

std::uint64_t CountsTable::post_selected() const {
  return n_pp + n_pm + n_mp + n_mm + n_bothA_p + n_bothA_m + n_bothB_p + n_bothB_m + n_bothAB;
}

std::uint64_t CountsTable::plus_plus_coincidences() const {
  return n_pp + n_bothA_p + n_bothB_p + n_bothAB;
}

namespace {

void require_probability(const char* field, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(field, "efficiency out of [0,1]");
}

void require_nonnegative(const char* field, double v) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be finite and >= 0");
}

}  // namespace

PhysicsParams validate(const PhysicsParams& params) {
  require_nonnegative("source.g", params.source.g);
  require_nonnegative("source.sigma_tech", params.source.sigma_tech);
  require_probability("detectors.eta_a", params.detectors.eta_a);
  require_probability("detectors.eta_b0", params.detectors.eta_b0);
  if (!(params.detectors.p_dc >= 0.0 && params.detectors.p_dc < 1.0)) {
    throw ConfigError("detectors.p_dc", "probability out of [0,1)");
  }
  if (!(params.vibration.tau_phonon > 0.0) || !std::isfinite(params.vibration.tau_phonon)) {
    throw ConfigError("vibration.tau_phonon", "lifetime must be > 0");
  }
  require_nonnegative("vibration.gamma_deph", params.vibration.gamma_deph);
  require_nonnegative("vibration.n_th", params.vibration.n_th);
  // tanh^2 g rounds to 1 in double precision beyond g ~ 19.
  if (params.source.lambda() >= 1.0) throw ConfigError("source.g", "squeezing too large");
  return params;
}

ExperimentPlan validate(const ExperimentPlan& plan) {
  if (plan.rep_period_num == 0 || plan.rep_period_den == 0) {
    throw ConfigError("plan.rep_period_ps", "must be > 0");
  }
  if (plan.bin_separation_ps <= 0) throw ConfigError("plan.bin_separation_ps", "must be > 0");
  if (plan.window_halfwidth_ps <= 0 || 2 * plan.window_halfwidth_ps >= plan.bin_separation_ps) {
    throw ConfigError("plan.window_halfwidth_ps", "windows overlap (need halfwidth < bin_separation/2)");
  }
  if (plan.rep_period_ps() <= static_cast<double>(plan.bin_separation_ps + plan.window_halfwidth_ps)) {
    throw ConfigError("plan.rep_period_ps", "must exceed bin_separation plus the window");
  }
  for (double d : plan.delays_ps) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw ConfigError("plan.delays_ps", "acausal delay");
  }
  return plan;
}

double eta_b_decay(double eta_b0, double delta_t, double tau) {
  if (delta_t < 0.0) throw NumericalError("acausal delay: delta_t < 0");
  if (!(tau > 0.0)) throw NumericalError("phonon lifetime must be > 0");
  return eta_b0 * std::exp(-delta_t / tau);
}

double total_phase_sigma(const PhysicsParams& params, double delta_t) {
  const double s = params.source.sigma_tech;
  return std::sqrt(s * s + params.vibration.gamma_deph * delta_t);
}

}  // namespace bellsim
