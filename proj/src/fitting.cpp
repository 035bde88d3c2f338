#include "bellsim/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "bellsim/error.hpp"

namespace bellsim::fit {

double erfcx(double z) {
  if (z < 3.0) return std::exp(z * z) * std::erfc(z);
  // erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))).
  double t = z;
  for (int n = 120; n >= 1; --n) t = z + 0.5 * n / t;
  return 1.0 / (std::sqrt(std::numbers::pi) * t);
}

double emg(double t, double tau, double sigma) {
  if (!(tau > 0.0)) throw NumericalError("emg: tau must be > 0");
  if (sigma < 0.0) throw NumericalError("emg: sigma must be >= 0");
  if (sigma == 0.0) return t < 0.0 ? 0.0 : std::exp(-t / tau);
  const double z = (sigma / tau - t / sigma) / std::numbers::sqrt2;
  if (z < 3.0) {
    return 0.5 * std::exp(0.5 * sigma * sigma / (tau * tau) - t / tau) * std::erfc(z);
  }
  return 0.5 * std::exp(-0.5 * t * t / (sigma * sigma)) * erfcx(z);
}

SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double> x0, std::vector<double> step, double tolerance,
                          int max_evaluations) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> pts(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
  std::vector<double> vals(n + 1);
  int evals = 0;
  auto eval = [&](const std::vector<double>& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(n + 1);
  while (evals < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        diameter = std::max(diameter, std::abs(pts[i][k] - pts[best][k]) /
                                          (1.0 + std::abs(pts[best][k])));
      }
    }
    if (vals[worst] - vals[best] <= tolerance * std::abs(vals[best]) + 1e-300 || diameter < 1e-13) {
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / n;
    }
    auto along = [&](double coef) {
      std::vector<double> x(n);
      for (std::size_t k = 0; k < n; ++k) x[k] = centroid[k] + coef * (pts[worst][k] - centroid[k]);
      return x;
    };
    const auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
    } else if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
    } else {
      const bool outside = fr < vals[worst];
      const auto xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : vals[worst])) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
          vals[i] = eval(pts[i]);
        }
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  return SimplexResult{pts[best], vals[best], evals};
}

namespace {

double weight(const Sample& s) { return s.sigma > 0.0 ? 1.0 / (s.sigma * s.sigma) : 1.0; }

double initial_tau(const std::vector<Sample>& samples) {
  // Log-linear slope of the positive excess after the peak.
  const auto peak = std::max_element(samples.begin(), samples.end(),
                                     [](const Sample& a, const Sample& b) { return a.y < b.y; });
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (auto it = peak; it != samples.end(); ++it) {
    if (it->y - 1.0 <= 0.0) continue;
    const double ly = std::log(it->y - 1.0);
    sx += it->x;
    sy += ly;
    sxx += it->x * it->x;
    sxy += it->x * ly;
    ++n;
  }
  if (n >= 2) {
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (slope < 0.0 && std::isfinite(slope)) return -1.0 / slope;
  }
  const double span = samples.back().x - samples.front().x;
  return span > 0.0 ? span / 3.0 : 1.0;
}

}  // namespace

DecayFit fit_g2_decay(const std::vector<Sample>& input, double irf_fwhm_ps,
                      const DecayFitOptions& opts) {
  if (input.size() < 4) throw NumericalError("fit_g2_decay: need at least 4 samples");
  if (!(irf_fwhm_ps >= 0.0)) throw ConfigError("irf_fwhm_ps", "must be >= 0");
  std::vector<Sample> samples = input;
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.x < b.x; });
  double excess = 0.0;
  for (const auto& s : samples) excess = std::max(excess, std::abs(s.y - 1.0));
  if (excess <= 1e-12) throw NumericalError("fit_g2_decay: no decay signal");
  if (samples.front().x == samples.back().x) throw NumericalError("fit_g2_decay: degenerate delays");

  const double sigma = irf_fwhm_ps * kFwhmToSigma;
  auto objective = [&](const std::vector<double>& p) {
    const double tau = std::exp(p[1]);
    double sum = 0.0;
    for (const auto& s : samples) {
      const double r = s.y - 1.0 - p[0] * emg(s.x, tau, sigma);
      sum += weight(s) * r * r;
    }
    return sum;
  };

  double peak = 0.0;
  for (const auto& s : samples) peak = std::max(peak, s.y - 1.0);
  const double tau0 = initial_tau(samples);
  const std::array<double, 3> factors{1.0, 0.3, 3.0};

  SimplexResult best;
  best.value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  for (int k = 0; k < std::max(opts.starts, 1); ++k) {
    const double t0 = tau0 * factors[static_cast<std::size_t>(k) % factors.size()];
    auto r = nelder_mead(objective, {peak, std::log(t0)}, {0.1 * std::max(peak, 1e-3), 0.3},
                         opts.tolerance, opts.max_evaluations);
    // Restart from the optimum to shake off a collapsed simplex.
    auto polish = nelder_mead(objective, r.x, {0.01 * std::max(std::abs(r.x[0]), 1e-6), 0.01},
                              opts.tolerance, opts.max_evaluations);
    evaluations += r.evaluations + polish.evaluations;
    if (polish.value < best.value) best = polish;
  }
  if (!std::isfinite(best.value)) throw NumericalError("fit_g2_decay: did not converge");

  DecayFit out;
  out.amplitude = best.x[0];
  out.tau = std::exp(best.x[1]);
  out.irf_sigma = sigma;
  out.residual_norm = std::sqrt(best.value);
  out.evaluations = evaluations;
  return out;
}

DephasingFit extract_dephasing(const std::vector<Sample>& samples, const std::vector<double>& s0,
                               const std::vector<double>& gamma_grid) {
  if (samples.empty()) throw NumericalError("extract_dephasing: no samples");
  if (s0.size() != samples.size()) throw ConfigError("s0", "one prediction per sample required");
  for (const auto& s : samples) {
    if (s.x < 0.0) throw NumericalError("extract_dephasing: acausal delay");
  }

  auto objective = [&](double gamma) {
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double model = 0.5 * s0[i] * (1.0 + std::exp(-2.0 * gamma * samples[i].x));
      const double r = samples[i].y - model;
      sum += weight(samples[i]) * r * r;
    }
    return sum;
  };

  DephasingFit out;
  out.grid = gamma_grid;
  if (out.grid.empty()) {
    out.grid.push_back(0.0);
    for (int i = 0; i <= 80; ++i) out.grid.push_back(1e-5 * std::pow(10.0, i / 10.0));
  }
  std::sort(out.grid.begin(), out.grid.end());
  if (out.grid.front() < 0.0) throw ConfigError("gamma_grid", "rates must be >= 0");
  for (double g : out.grid) out.grid_objective.push_back(objective(g));

  const auto j = static_cast<std::size_t>(
      std::min_element(out.grid_objective.begin(), out.grid_objective.end()) -
      out.grid_objective.begin());
  double a = j > 0 ? out.grid[j - 1] : out.grid[j];
  double b = j + 1 < out.grid.size() ? out.grid[j + 1] : out.grid[j];

  // Golden-section refinement inside the bracketing grid cells.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = objective(c), fd = objective(d);
  for (int it = 0; it < 300 && b - a > 1e-15 * std::max(1.0, b); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = objective(d);
    }
  }
  double gamma = 0.5 * (a + b);
  double best = objective(gamma);
  if (out.grid_objective[j] < best) {
    gamma = out.grid[j];
    best = out.grid_objective[j];
  }
  out.gamma = gamma;
  out.objective = best;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.residuals.push_back(samples[i].y -
                            0.5 * s0[i] * (1.0 + std::exp(-2.0 * gamma * samples[i].x)));
  }

  const bool weighted = std::all_of(samples.begin(), samples.end(),
                                    [](const Sample& s) { return s.sigma > 0.0; });
  if (weighted) {
    const double target = best + 2.71;
    double lo = gamma, hi = std::max(gamma, 1e-6);
    while (objective(hi) < target && hi < 1e3) {
      lo = hi;
      hi *= 2.0;
    }
    if (objective(hi) >= target) {
      for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (objective(mid) < target ? lo : hi) = mid;
      }
      out.gamma_upper = hi;
    }
  }
  return out;
}

RateEstimate estimate_params(double stokes, double antistokes_neg, double coinc, double rep,
                             double eta_a) {
  if (!(rep > 0.0) || !std::isfinite(rep)) throw ConfigError("rep_rate_hz", "must be > 0");
  if (!(eta_a > 0.0 && eta_a <= 1.0)) throw ConfigError("eta_a", "efficiency out of (0,1]");
  const std::array<std::pair<const char*, double>, 3> rates{
      {{"stokes_rate_hz", stokes}, {"antistokes_neg_delay_rate_hz", antistokes_neg}, {"coinc_rate_hz", coinc}}};
  for (const auto& [name, r] : rates) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError(name, "rate must be >= 0");
    if (r > rep) throw ConfigError(name, "rate exceeds the repetition rate");
  }
  if (!(stokes > 0.0)) throw ConfigError("stokes_rate_hz", "must be > 0");

  RateEstimate e;
  e.mean_photons = stokes / (rep * eta_a);
  e.g = std::asinh(std::sqrt(e.mean_photons));
  e.p_dc = antistokes_neg / rep;
  e.eta_b0 = coinc / stokes;
  if (coinc == 0.0) e.warnings.push_back("zero coincidence rate: eta_b0 = 0");
  if (antistokes_neg == 0.0) e.warnings.push_back("zero background rate: p_dc = 0");
  return e;
}

Rates predict_rates(double g, double p_dc, double eta_b0, double rep, double eta_a) {
  Rates r;
  const double sh = std::sinh(g);
  r.stokes_hz = rep * eta_a * sh * sh;
  r.antistokes_neg_delay_hz = rep * p_dc;
  r.coinc_hz = r.stokes_hz * eta_b0;
  return r;
}

RetarderCalibration calibrate_retarder(const std::vector<std::pair<double, double>>& samples) {
  if (samples.empty()) throw NumericalError("calibrate_retarder: no samples");
  RetarderCalibration cal;
  for (const auto& [v, t_raw] : samples) {
    double t = t_raw;
    if (!std::isfinite(t) || t < -1e-3 || t > 1.0 + 1e-3) {
      throw NumericalError("calibrate_retarder: transmission outside [0,1] at V=" + std::to_string(v));
    }
    if (t < -1e-9 || t > 1.0 + 1e-9) {
      cal.warnings.push_back("transmission " + std::to_string(t) + " clamped at V=" + std::to_string(v));
    }
    t = std::clamp(t, 0.0, 1.0);
    cal.points.push_back({v, t, std::acos(2.0 * t - 1.0)});
  }
  std::stable_sort(cal.points.begin(), cal.points.end(),
                   [](const RetarderPoint& a, const RetarderPoint& b) { return a.voltage < b.voltage; });

  std::size_t start = 0;
  int dir = 0;
  for (std::size_t i = 1; i < cal.points.size(); ++i) {
    const double diff = cal.points[i].delta - cal.points[i - 1].delta;
    const int s = diff > 0 ? 1 : (diff < 0 ? -1 : 0);
    if (s != 0 && dir != 0 && s != dir) {
      cal.segments.emplace_back(start, i - 1);
      start = i - 1;
    }
    if (s != 0) dir = s;
  }
  cal.segments.emplace_back(start, cal.points.size() - 1);
  return cal;
}

std::vector<double> RetarderCalibration::voltages_for(double delta) const {
  std::vector<double> out;
  for (const auto& [first, last] : segments) {
    for (std::size_t i = first; i < last; ++i) {
      const auto& p = points[i];
      const auto& q = points[i + 1];
      const double lo = std::min(p.delta, q.delta), hi = std::max(p.delta, q.delta);
      if (delta < lo || delta > hi) continue;
      const double w = hi > lo ? (delta - p.delta) / (q.delta - p.delta) : 0.0;
      out.push_back(p.voltage + w * (q.voltage - p.voltage));
      break;
    }
  }
  return out;
}

}  // namespace bellsim::fit
