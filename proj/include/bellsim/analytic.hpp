#pragma once

// Closed-form click statistics of the four-mode squeezed state measured with
// non-number-resolving detectors.
//
// The single probability kernel is the no-click generating function
//   G(x) = det(I - M^H M) / det(I - M^H diag(x_A, x_Aperp) M diag(x_B, x_Bperp)),
// i.e. E[prod_i x_i^{n_i}] for the state (1-lambda) exp(a^H M b^H)|0>. Every
// click-pattern probability follows by inclusion-exclusion over no-click
// subsets; internal arithmetic is long double because coincidence
// probabilities (~1e-8) are differences of O(1) generating values.

#include <array>
#include <complex>
#include <functional>

#include "bellsim/core.hpp"

namespace bellsim::analytic {

using Real = long double;
using Complex = std::complex<Real>;

/// Coupling matrix of the effectively measured state. Rows: Alice modes
/// (A, A_perp); columns: Bob modes (B, B_perp).
struct SchmidtMatrix {
  std::array<std::array<Complex, 2>, 2> m{};

  const Complex& operator()(int r, int c) const { return m[r][c]; }
  /// Singular values, largest first.
  std::array<double, 2> singular_values() const;
};

/// Per-mode survival factors (A, A_perp, B, B_perp), each in [0, 1].
struct AttenuationVector {
  std::array<double, 4> x{1.0, 1.0, 1.0, 1.0};
};

SchmidtMatrix schmidt_matrix(const Settings& settings, double phi, double g);

/// E[prod x_i^{n_i}]; throws NumericalError on a singular determinant or
/// attenuation outside [0, 1].
double noclick_generating(const SchmidtMatrix& m, const AttenuationVector& x);
Real noclick_generating_ld(const SchmidtMatrix& m, const std::array<Real, 4>& x);

/// Effective measurement parameters at one write-read delay.
struct MeasurementModel {
  double g = 0.0;
  double eta_a = 0.0;
  double eta_b = 0.0;
  double p_dc = 0.0;
  double sigma = 0.0;  // total phase-noise std

  /// eta_b = eta_b0 exp(-dt/tau), sigma^2 = sigma_tech^2 + gamma dt.
  static MeasurementModel at_delay(const PhysicsParams& params, double delta_t);

  std::array<double, 4> efficiencies() const { return {eta_a, eta_a, eta_b, eta_b}; }
};

PatternDistribution pattern_probs_fixed_phase(const Settings& settings,
                                              const MeasurementModel& model, double phi);
PatternDistribution pattern_probs_fixed_phase(const Settings& settings,
                                              const PhysicsParams& params, double delta_t,
                                              double phi);

/// Phase average over phi ~ N(0, model.sigma^2).
PatternDistribution pattern_probs_avg(const Settings& settings, const MeasurementModel& model);
PatternDistribution pattern_probs_avg(const Settings& settings, const PhysicsParams& params,
                                      double delta_t);

/// Quadrature weights for a zero-mean normal phase of std sigma. Gauss-Hermite
/// (orders 21, 41, 81, 161) for sigma <= 1; for wider distributions the phase
/// is wrapped onto one period and integrated with the trapezoid rule.
struct PhaseRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Averages `f` against the phase distribution, escalating the rule until
/// successive results agree to `rel_tol` (plus a 1e-18 absolute floor).
std::array<Real, 16> phase_average(const std::function<std::array<Real, 16>(double)>& f,
                                   double sigma, double rel_tol = 1e-10);

/// g2 between Alice "+" (A) and Bob "+" (B_perp) at alpha = beta = 0.
double g2_analytic(const MeasurementModel& model);
double g2_analytic(const PhysicsParams& params, double delta_t);

/// Fringe visibility of A-B coincidences at alpha = 0 (extrema at beta = 0, pi/2).
double visibility_alpha0(const MeasurementModel& model);

enum class VisibilityMode { kQuadrature, kTaylor };

/// Fringe visibility of A-B_perp coincidences at alpha = pi/4 for phase std
/// `sigma_tot` (extrema at beta = pi/4, 3pi/4). kTaylor uses the
/// second-order expansion in sigma.
double visibility_alpha_pi4(const MeasurementModel& model, double sigma_tot,
                            VisibilityMode mode = VisibilityMode::kQuadrature);

enum class CorrelatorForm {
  kPostSelected,        // exact: conditioned on >= 1 click per side
  kMarginalNormalized,  // 1 - 2P(A)/N_A - 2P(B_perp)/N_B + 4P(A,B_perp)/N
};

/// Correlator with the multi-click rule (A clicked => Alice +1, B_perp
/// clicked => Bob +1). Throws NumericalError when nothing is post-selected.
double correlation_E(double alpha, double beta, const MeasurementModel& model,
                     CorrelatorForm form = CorrelatorForm::kPostSelected);
double correlation_E(const PatternDistribution& dist,
                     CorrelatorForm form = CorrelatorForm::kPostSelected);

/// Settings of the four CHSH correlators, in the order
/// E(0, pi/8) + E(0, -pi/8) + E(pi/4, pi/8) - E(pi/4, -pi/8).
std::array<Settings, 4> chsh_settings();

double chsh(const MeasurementModel& model, CorrelatorForm form = CorrelatorForm::kPostSelected);
double chsh_analytic(const PhysicsParams& params, double delta_t,
                     CorrelatorForm form = CorrelatorForm::kPostSelected);

/// S(dt) = (s0 / 2)(1 + exp(-2 gamma dt)).
double chsh_dephasing_curve(double s0, double gamma, double delta_t);

struct ViolationWindow {
  double window_ps = 0.0;
  bool violated_at_zero = false;
  bool capped = false;  // still violating at the horizon
};

struct WindowOptions {
  double horizon_ps = 500.0;
  double tolerance_ps = 0.01;
  double initial_step_ps = 1.0;
};

/// Largest delay with CHSH > 2 for the given parameters.
ViolationWindow violation_window(const PhysicsParams& params, const WindowOptions& opts = {});

/// Parameters of the idealised experiment: unit efficiencies, dark counts
/// equal to the thermal occupancy, no technical phase noise.
PhysicsParams ideal_params(double g, double tau_phonon, double n_th, double gamma_deph = 0.0);

/// Window for ideal_params(...) built from `params`' g, tau, n_th, gamma.
ViolationWindow ideal_violation_window(const PhysicsParams& params, const WindowOptions& opts = {});

struct SqueezingOptimum {
  double g = 0.0;
  double window_ps = 0.0;
};

/// Maximises the ideal violation window over g in [g_lo, g_hi].
SqueezingOptimum optimal_squeezing(const PhysicsParams& params, double g_lo, double g_hi,
                                   const WindowOptions& opts = {});

inline double v_from_g2(double g2) { return (g2 - 1.0) / (g2 + 1.0); }
inline double g2_from_v(double v) { return (1.0 + v) / (1.0 - v); }

}  // namespace bellsim::analytic
