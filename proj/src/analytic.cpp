#include "bellsim/analytic.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "bellsim/error.hpp"

namespace bellsim::analytic {

namespace {

using Probs = std::array<Real, 16>;

constexpr int bit_of(int detector) { return 1 << (3 - detector); }

Probs pattern_probs_ld(const SchmidtMatrix& m, const std::array<double, 4>& eta, double p_dc) {
  std::array<Real, 16> noclick{};
  const Real keep = 1.0L - static_cast<Real>(p_dc);
  for (int subset = 0; subset < 16; ++subset) {
    std::array<Real, 4> x{1.0L, 1.0L, 1.0L, 1.0L};
    Real dark = 1.0L;
    for (int d = 0; d < 4; ++d) {
      if (subset & bit_of(d)) {
        x[d] = 1.0L - static_cast<Real>(eta[d]);
        dark *= keep;
      }
    }
    noclick[subset] = dark * noclick_generating_ld(m, x);
  }
  // P(click set C exactly) = sum_{T subset C} (-1)^{|T|} P(no click on ~C union T).
  Probs p{};
  for (int c = 0; c < 16; ++c) {
    const int silent = (~c) & 15;
    Real total = 0.0L;
    for (int t = c;; t = (t - 1) & c) {
      const Real term = noclick[silent | t];
      total += (std::popcount(static_cast<unsigned>(t)) & 1) ? -term : term;
      if (t == 0) break;
    }
    p[c] = std::max(total, 0.0L);
  }
  return p;
}

PatternDistribution to_distribution(const Probs& p) {
  PatternDistribution d;
  for (int i = 0; i < 16; ++i) d.p[i] = static_cast<double>(p[i]);
  return d;
}

Probs fixed_phase_ld(const Settings& s, const MeasurementModel& model, double phi) {
  return pattern_probs_ld(schmidt_matrix(s, phi, model.g), model.efficiencies(), model.p_dc);
}

Probs avg_ld(const Settings& s, const MeasurementModel& model) {
  if (model.sigma == 0.0) return fixed_phase_ld(s, model, 0.0);
  return phase_average([&](double phi) { return fixed_phase_ld(s, model, phi); }, model.sigma);
}

// Gauss-Hermite rule for the standard normal (Golub-Welsch).
const PhaseRule& hermite_rule(int order) {
  static std::mutex mutex;
  static std::map<int, PhaseRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;

  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  PhaseRule rule;
  for (int i = 0; i < order; ++i) {
    rule.nodes.push_back(solver.eigenvalues()(i));
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights.push_back(v0 * v0);
  }
  return cache.emplace(order, std::move(rule)).first->second;
}

// Trapezoid rule over one period against the wrapped normal density.
PhaseRule wrapped_rule(double sigma, int points) {
  PhaseRule rule;
  const double h = 2.0 * std::numbers::pi / points;
  for (int j = 0; j < points; ++j) {
    const double phi = -std::numbers::pi + h * j;
    double density = 1.0;
    for (int k = 1;; ++k) {
      const double damp = std::exp(-0.5 * k * k * sigma * sigma);
      if (damp < 1e-18) break;
      density += 2.0 * damp * std::cos(k * phi);
    }
    rule.nodes.push_back(phi);
    rule.weights.push_back(density / points);
  }
  return rule;
}

Probs apply_rule(const std::function<Probs(double)>& f, const PhaseRule& rule, double scale) {
  Probs acc{};
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const Probs v = f(scale * rule.nodes[i]);
    for (int k = 0; k < 16; ++k) acc[k] += static_cast<Real>(rule.weights[i]) * v[k];
  }
  return acc;
}

bool converged(const Probs& a, const Probs& b, double rel_tol) {
  for (int k = 0; k < 16; ++k) {
    const Real diff = std::abs(a[k] - b[k]);
    if (diff > static_cast<Real>(rel_tol) * std::abs(b[k]) + 1e-18L) return false;
  }
  return true;
}

double coincidence(const Probs& p, Detector alice, Detector bob) {
  Real s = 0.0L;
  for (int i = 0; i < 16; ++i) {
    const ClickPattern pat(static_cast<std::uint8_t>(i));
    if (pat.clicked(alice) && pat.clicked(bob)) s += p[i];
  }
  return static_cast<double>(s);
}

double single(const Probs& p, Detector d) {
  Real s = 0.0L;
  for (int i = 0; i < 16; ++i) {
    if (ClickPattern(static_cast<std::uint8_t>(i)).clicked(d)) s += p[i];
  }
  return static_cast<double>(s);
}

}  // namespace

std::array<double, 2> SchmidtMatrix::singular_values() const {
  // Eigenvalues of the Hermitian matrix M^H M.
  const Complex h00 = std::conj(m[0][0]) * m[0][0] + std::conj(m[1][0]) * m[1][0];
  const Complex h11 = std::conj(m[0][1]) * m[0][1] + std::conj(m[1][1]) * m[1][1];
  const Complex h01 = std::conj(m[0][0]) * m[0][1] + std::conj(m[1][0]) * m[1][1];
  const Real half_trace = 0.5L * (h00.real() + h11.real());
  const Real diff = 0.5L * (h00.real() - h11.real());
  const Real radius = std::sqrt(diff * diff + std::norm(h01));
  const Real lo = std::max(half_trace - radius, 0.0L);
  return {static_cast<double>(std::sqrt(half_trace + radius)), static_cast<double>(std::sqrt(lo))};
}

SchmidtMatrix schmidt_matrix(const Settings& s, double phi, double g) {
  // M = tanh(g) R_A^T K R_B with K = [[0, -1], [1, 0]] and
  // R(angle, az) = [[cos, sin e^{i az}], [-sin e^{-i az}, cos]].
  const Real ca = std::cos(static_cast<Real>(s.alpha));
  const Real sa = std::sin(static_cast<Real>(s.alpha));
  const Real cb = std::cos(static_cast<Real>(s.beta));
  const Real sb = std::sin(static_cast<Real>(s.beta));
  const Real p = static_cast<Real>(s.phi_s) + static_cast<Real>(phi);
  const Real q = static_cast<Real>(s.phi_a) - static_cast<Real>(phi);
  const Complex ep = std::polar(1.0L, p);
  const Complex eq = std::polar(1.0L, q);
  const Real th = std::tanh(static_cast<Real>(g));

  SchmidtMatrix out;
  out.m[0][0] = th * (ca * sb * std::conj(eq) - sa * std::conj(ep) * cb);
  out.m[0][1] = th * (-ca * cb - sa * sb * eq * std::conj(ep));
  out.m[1][0] = th * (sa * ep * sb * std::conj(eq) + ca * cb);
  out.m[1][1] = th * (-sa * ep * cb + ca * sb * eq);
  return out;
}

Real noclick_generating_ld(const SchmidtMatrix& sm, const std::array<Real, 4>& x) {
  const auto& m = sm.m;
  // H = M^H diag(xa, xap) M, then det(I - H diag(xb, xbp)).
  auto hermitian = [&](Real xa, Real xap) {
    std::array<std::array<Complex, 2>, 2> h{};
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        h[i][j] = std::conj(m[0][i]) * xa * m[0][j] + std::conj(m[1][i]) * xap * m[1][j];
      }
    }
    return h;
  };
  auto det_one_minus = [](const std::array<std::array<Complex, 2>, 2>& h, Real xb, Real xbp) {
    const Complex a = 1.0L - h[0][0] * xb;
    const Complex b = -h[0][1] * xbp;
    const Complex c = -h[1][0] * xb;
    const Complex d = 1.0L - h[1][1] * xbp;
    return a * d - b * c;
  };
  const Complex norm = det_one_minus(hermitian(1.0L, 1.0L), 1.0L, 1.0L);
  const Complex den = det_one_minus(hermitian(x[0], x[1]), x[2], x[3]);
  if (std::abs(den) < 1e-300L || std::abs(norm) < 1e-300L) {
    throw NumericalError("noclick_generating: singular determinant");
  }
  return (norm / den).real();
}

double noclick_generating(const SchmidtMatrix& m, const AttenuationVector& x) {
  std::array<Real, 4> xs{};
  for (int i = 0; i < 4; ++i) {
    if (!(x.x[i] >= 0.0 && x.x[i] <= 1.0)) {
      throw NumericalError("noclick_generating: attenuation outside [0,1]");
    }
    xs[i] = x.x[i];
  }
  return static_cast<double>(noclick_generating_ld(m, xs));
}

MeasurementModel MeasurementModel::at_delay(const PhysicsParams& params, double delta_t) {
  MeasurementModel m;
  m.g = params.source.g;
  m.eta_a = params.detectors.eta_a;
  m.eta_b = eta_b_decay(params.detectors.eta_b0, delta_t, params.vibration.tau_phonon);
  m.p_dc = params.detectors.p_dc;
  m.sigma = total_phase_sigma(params, delta_t);
  return m;
}

PatternDistribution pattern_probs_fixed_phase(const Settings& settings,
                                              const MeasurementModel& model, double phi) {
  return to_distribution(fixed_phase_ld(settings, model, phi));
}

PatternDistribution pattern_probs_fixed_phase(const Settings& settings,
                                              const PhysicsParams& params, double delta_t,
                                              double phi) {
  return pattern_probs_fixed_phase(settings, MeasurementModel::at_delay(params, delta_t), phi);
}

PatternDistribution pattern_probs_avg(const Settings& settings, const MeasurementModel& model) {
  return to_distribution(avg_ld(settings, model));
}

PatternDistribution pattern_probs_avg(const Settings& settings, const PhysicsParams& params,
                                      double delta_t) {
  return pattern_probs_avg(settings, MeasurementModel::at_delay(params, delta_t));
}

std::array<Real, 16> phase_average(const std::function<std::array<Real, 16>(double)>& f,
                                   double sigma, double rel_tol) {
  if (sigma < 0.0) throw NumericalError("phase_average: negative sigma");
  if (sigma == 0.0) return f(0.0);

  if (sigma <= 1.0) {
    Probs prev = apply_rule(f, hermite_rule(21), sigma);
    for (int order : {41, 81, 161}) {
      Probs next = apply_rule(f, hermite_rule(order), sigma);
      if (converged(next, prev, rel_tol)) return next;
      prev = next;
    }
  } else {
    Probs prev = apply_rule(f, wrapped_rule(sigma, 32), 1.0);
    for (int points = 64; points <= 8192; points *= 2) {
      Probs next = apply_rule(f, wrapped_rule(sigma, points), 1.0);
      if (converged(next, prev, rel_tol)) return next;
      prev = next;
    }
  }
  throw NumericalError("phase_average: quadrature did not converge");
}

double g2_analytic(const MeasurementModel& model) {
  // At alpha = beta = 0 the coupling is phase independent; A pairs with B_perp.
  const Probs p = fixed_phase_ld(Settings{}, model, 0.0);
  const double pa = single(p, Detector::kA);
  const double pb = single(p, Detector::kBPerp);
  if (pa <= 0.0 || pb <= 0.0) throw NumericalError("g2: no clicks");
  return coincidence(p, Detector::kA, Detector::kBPerp) / (pa * pb);
}

double g2_analytic(const PhysicsParams& params, double delta_t) {
  return g2_analytic(MeasurementModel::at_delay(params, delta_t));
}

double visibility_alpha0(const MeasurementModel& model) {
  const double c0 = coincidence(fixed_phase_ld(Settings{0, 0, 0, 0}, model, 0.0), Detector::kA,
                                Detector::kB);
  const double c1 = coincidence(
      fixed_phase_ld(Settings{0, 0, std::numbers::pi / 2, 0}, model, 0.0), Detector::kA,
      Detector::kB);
  const double hi = std::max(c0, c1);
  const double lo = std::min(c0, c1);
  if (hi + lo <= 0.0) throw NumericalError("visibility: no clicks");
  return (hi - lo) / (hi + lo);
}

double visibility_alpha_pi4(const MeasurementModel& model, double sigma_tot, VisibilityMode mode) {
  if (sigma_tot < 0.0) throw NumericalError("visibility: negative sigma");
  constexpr double pi = std::numbers::pi;
  std::array<double, 2> fringe{};
  const std::array<double, 2> betas{pi / 4, 3 * pi / 4};

  if (mode == VisibilityMode::kQuadrature) {
    MeasurementModel m = model;
    m.sigma = sigma_tot;
    for (int i = 0; i < 2; ++i) {
      fringe[i] = coincidence(avg_ld(Settings{pi / 4, 0, betas[i], 0}, m), Detector::kA,
                              Detector::kBPerp);
    }
  } else {
    const double lam = std::tanh(model.g) * std::tanh(model.g);
    const double keep = 1.0 - model.p_dc;
    const double ea = model.eta_a, eb = model.eta_b;
    const double marg_a = (1 - lam) / (1 - lam * (1 - ea));
    const double marg_b = (1 - lam) / (1 - lam * (1 - eb));
    const double ch4 = std::pow(std::cosh(model.g), 4);
    for (int i = 0; i < 2; ++i) {
      const double s2b = std::sin(2 * betas[i]);
      const double zeta = 2 - (2 - ea) * (2 - eb) * lam - ea * eb * s2b * lam +
                          2 * (1 - ea) * (1 - eb) * lam * lam;
      const double xi = ea * eb * s2b * lam;
      const double pair = 1 / zeta - 2 * xi / (zeta * zeta) * sigma_tot * sigma_tot;
      fringe[i] = 1 - keep * marg_a - keep * marg_b + keep * keep * 2 / ch4 * pair;
    }
  }
  const double hi = std::max(fringe[0], fringe[1]);
  const double lo = std::min(fringe[0], fringe[1]);
  if (hi + lo <= 0.0) throw NumericalError("visibility: no clicks");
  return (hi - lo) / (hi + lo);
}

double correlation_E(const PatternDistribution& dist, CorrelatorForm form) {
  double e = 0.0;
  if (form == CorrelatorForm::kPostSelected) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 16; ++i) {
      const ClickPattern pat(static_cast<std::uint8_t>(i));
      const bool alice = pat.clicked(Detector::kA) || pat.clicked(Detector::kAPerp);
      const bool bob = pat.clicked(Detector::kB) || pat.clicked(Detector::kBPerp);
      if (!alice || !bob) continue;
      const int a = pat.clicked(Detector::kA) ? 1 : -1;
      const int b = pat.clicked(Detector::kBPerp) ? 1 : -1;
      num += a * b * dist.p[i];
      den += dist.p[i];
    }
    if (!(den > 0.0)) throw NumericalError("correlation_E: zero post-selected probability");
    e = num / den;
  } else {
    const double n_a = 1.0 - dist.none_clicked({Detector::kA, Detector::kAPerp});
    const double n_b = 1.0 - dist.none_clicked({Detector::kB, Detector::kBPerp});
    double n = 0.0;
    for (int i = 0; i < 16; ++i) {
      const ClickPattern pat(static_cast<std::uint8_t>(i));
      if ((pat.clicked(Detector::kA) || pat.clicked(Detector::kAPerp)) &&
          (pat.clicked(Detector::kB) || pat.clicked(Detector::kBPerp))) {
        n += dist.p[i];
      }
    }
    if (!(n > 0.0 && n_a > 0.0 && n_b > 0.0)) {
      throw NumericalError("correlation_E: zero post-selected probability");
    }
    e = 1.0 - 2.0 * dist.all_clicked({Detector::kA}) / n_a -
        2.0 * dist.all_clicked({Detector::kBPerp}) / n_b +
        4.0 * dist.all_clicked({Detector::kA, Detector::kBPerp}) / n;
  }
  if (std::abs(e) > 1.0 + 1e-9) throw NumericalError("correlation_E: |E| > 1");
  return e;
}

double correlation_E(double alpha, double beta, const MeasurementModel& model,
                     CorrelatorForm form) {
  return correlation_E(to_distribution(avg_ld(Settings{alpha, 0, beta, 0}, model)), form);
}

std::array<Settings, 4> chsh_settings() {
  constexpr double pi = std::numbers::pi;
  return {Settings{0, 0, pi / 8, 0}, Settings{0, 0, -pi / 8, 0}, Settings{pi / 4, 0, pi / 8, 0},
          Settings{pi / 4, 0, -pi / 8, 0}};
}

double chsh(const MeasurementModel& model, CorrelatorForm form) {
  const auto s = chsh_settings();
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double e = correlation_E(s[i].alpha, s[i].beta, model, form);
    total += (i == 3) ? -e : e;
  }
  if (std::abs(total) > kTsirelson + 1e-9) throw NumericalError("CHSH exceeds the Tsirelson bound");
  return total;
}

double chsh_analytic(const PhysicsParams& params, double delta_t, CorrelatorForm form) {
  return chsh(MeasurementModel::at_delay(params, delta_t), form);
}

double chsh_dephasing_curve(double s0, double gamma, double delta_t) {
  return 0.5 * s0 * (1.0 + std::exp(-2.0 * gamma * delta_t));
}

ViolationWindow violation_window(const PhysicsParams& params, const WindowOptions& opts) {
  auto excess = [&](double t) { return chsh_analytic(params, t) - 2.0; };
  ViolationWindow out;
  if (!(excess(0.0) > 0.0)) return out;
  out.violated_at_zero = true;

  double lo = 0.0;
  double step = opts.initial_step_ps;
  double hi = -1.0;
  while (lo < opts.horizon_ps) {
    const double t = std::min(lo + step, opts.horizon_ps);
    if (excess(t) <= 0.0) {
      hi = t;
      break;
    }
    lo = t;
    step *= 2.0;
  }
  if (hi < 0.0) {
    out.window_ps = opts.horizon_ps;
    out.capped = true;
    return out;
  }
  while (hi - lo > opts.tolerance_ps) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0.0 ? lo : hi) = mid;
  }
  out.window_ps = 0.5 * (lo + hi);
  return out;
}

PhysicsParams ideal_params(double g, double tau_phonon, double n_th, double gamma_deph) {
  PhysicsParams p;
  p.source = SourceParams{g, 0.0};
  p.detectors = DetectorParams{1.0, 1.0, n_th};
  p.vibration = VibrationParams{tau_phonon, gamma_deph, n_th};
  return p;
}

ViolationWindow ideal_violation_window(const PhysicsParams& params, const WindowOptions& opts) {
  return violation_window(ideal_params(params.source.g, params.vibration.tau_phonon,
                                       params.vibration.n_th, params.vibration.gamma_deph),
                          opts);
}

SqueezingOptimum optimal_squeezing(const PhysicsParams& params, double g_lo, double g_hi,
                                   const WindowOptions& opts) {
  WindowOptions fine = opts;
  fine.tolerance_ps = std::min(opts.tolerance_ps, 1e-7);
  auto window = [&](double g) {
    PhysicsParams p = params;
    p.source.g = g;
    return ideal_violation_window(p, fine).window_ps;
  };
  // Golden-section search; the window is unimodal in g.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = g_lo, b = g_hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = window(c), fd = window(d);
  while (b - a > 1e-4) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = window(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = window(d);
    }
  }
  const double g = 0.5 * (a + b);
  return SqueezingOptimum{g, window(g)};
}

}  // namespace bellsim::analytic
