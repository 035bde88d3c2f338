#pragma once

// Decay and dephasing fits, parameter inference from measured rates, and
// variable-retarder calibration.

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bellsim::fit {

/// Exponential decay exp(-t/tau) for t >= 0 convolved with a unit-area
/// Gaussian of std `sigma`.
double emg(double t, double tau, double sigma);

/// Scaled complementary error function exp(z^2) erfc(z).
double erfcx(double z);

inline constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))

struct Sample {
  double x = 0.0;
  double y = 0.0;
  double sigma = 0.0;  // 0: unweighted
};

struct DecayFit {
  double amplitude = 0.0;
  double tau = 0.0;
  double irf_sigma = 0.0;
  double baseline = 1.0;
  double residual_norm = 0.0;
  int evaluations = 0;
};

struct DecayFitOptions {
  int starts = 3;
  int max_evaluations = 20000;
  double tolerance = 1e-14;
};

/// Least-squares fit of g2 = 1 + A emg(dt; tau, sigma_irf) with sigma_irf
/// fixed from the IRF FWHM. Throws NumericalError for fewer than four
/// samples or a flat signal.
DecayFit fit_g2_decay(const std::vector<Sample>& samples, double irf_fwhm_ps,
                      const DecayFitOptions& opts = {});

struct DephasingFit {
  double gamma = 0.0;
  std::optional<double> gamma_upper;  // delta chi2 = 2.71 bound when sigmas are given
  double objective = 0.0;             // chi2 (weighted) or sum of squares
  std::vector<double> residuals;      // at gamma
  std::vector<double> grid;
  std::vector<double> grid_objective;
};

/// Fits S_i = (s0_i / 2)(1 + exp(-2 gamma dt_i)) over gamma >= 0. `s0` holds
/// the gamma = 0 prediction at each sample.
DephasingFit extract_dephasing(const std::vector<Sample>& samples, const std::vector<double>& s0,
                               const std::vector<double>& gamma_grid = {});

struct RateEstimate {
  double mean_photons = 0.0;
  double g = 0.0;
  double p_dc = 0.0;
  double eta_b0 = 0.0;
  std::vector<std::string> warnings;
};

struct Rates {
  double stokes_hz = 0.0;
  double antistokes_neg_delay_hz = 0.0;
  double coinc_hz = 0.0;
};

RateEstimate estimate_params(double stokes_rate_hz, double antistokes_neg_delay_rate_hz,
                             double coinc_rate_hz, double rep_rate_hz, double eta_a);

/// Forward model inverted by estimate_params.
Rates predict_rates(double g, double p_dc, double eta_b0, double rep_rate_hz, double eta_a);

struct RetarderPoint {
  double voltage = 0.0;
  double transmission = 0.0;
  double delta = 0.0;
};

struct RetarderCalibration {
  std::vector<RetarderPoint> points;              // sorted by voltage
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // monotone index ranges
  std::vector<std::string> warnings;

  /// Voltages (one per monotone segment) producing phase `delta`.
  std::vector<double> voltages_for(double delta) const;
};

/// delta = arccos(2T - 1) per sample. T outside [0, 1] by more than 1e-9 is
/// clamped with a warning; by more than 1e-3 it is an error.
RetarderCalibration calibrate_retarder(const std::vector<std::pair<double, double>>& samples);

/// Derivative-free minimiser used by the fits.
struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
};

SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double> x0, std::vector<double> step, double tolerance,
                          int max_evaluations);

}  // namespace bellsim::fit
