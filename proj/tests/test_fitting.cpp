#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <numbers>
#include <random>

#include "bellsim/error.hpp"
#include "bellsim/fitting.hpp"

using namespace bellsim;
using namespace bellsim::fit;

namespace {

double emg_by_quadrature(double t, double tau, double sigma) {
  using boost::math::quadrature::gauss_kronrod;
  const auto kernel = [&](double s) {
    const double z = (t - s) / sigma;
    return std::exp(-s / tau) * std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * std::numbers::pi));
  };
  // Split at the Gaussian peak so the adaptive rule sees both sides.
  const double lo = std::max(0.0, t - 12 * sigma), hi = std::max(t + 12 * sigma, 0.0);
  double v = 0.0;
  if (hi > lo) v += gauss_kronrod<double, 61>::integrate(kernel, lo, hi, 15, 1e-14);
  if (hi < 60 * tau) v += gauss_kronrod<double, 61>::integrate(kernel, hi, 60 * tau, 15, 1e-14);
  return v;
}

std::vector<Sample> decay_samples(double amp, double tau, double sigma) {
  std::vector<Sample> s;
  for (double t = -2.0; t <= 20.0; t += 0.25) s.push_back({t, 1.0 + amp * emg(t, tau, sigma), 0.0});
  return s;
}

}  // namespace

TEST_CASE("erfcx") {
  CHECK(erfcx(0.0) == doctest::Approx(1.0));
  CHECK(erfcx(5.0) == doctest::Approx(0.110704637733069).epsilon(1e-13));
  CHECK(erfcx(1.0) == doctest::Approx(std::exp(1.0) * std::erfc(1.0)).epsilon(1e-14));
  CHECK(erfcx(100.0) == doctest::Approx(1.0 / (100.0 * std::sqrt(std::numbers::pi))).epsilon(1e-4));
  CHECK(std::isfinite(erfcx(1e4)));
}

TEST_CASE("EMG closed form matches numerical convolution") {
  const double sigma = 0.2 * kFwhmToSigma;
  double worst = 0.0;
  for (double tau : {0.5, 3.78, 10.0}) {
    for (double t = -1.0; t <= 30.0; t += 0.37) {
      worst = std::max(worst, std::abs(emg(t, tau, sigma) - emg_by_quadrature(t, tau, sigma)));
    }
  }
  CHECK(worst < 1e-8);
  CHECK(emg(2.0, 3.78, 0.0) == doctest::Approx(std::exp(-2.0 / 3.78)));
  CHECK(emg(-2.0, 3.78, 0.0) == 0.0);
}

TEST_CASE("decay fit recovers synthetic parameters") {
  const double sigma = 0.2 * kFwhmToSigma;
  const auto f = fit_g2_decay(decay_samples(25.5, 3.78, sigma), 0.2);
  CHECK(f.tau == doctest::Approx(3.78).epsilon(0.01));
  CHECK(f.amplitude == doctest::Approx(25.5).epsilon(0.01));
  CHECK(f.irf_sigma == doctest::Approx(sigma));
  CHECK(f.baseline == 1.0);

  const auto exact = fit_g2_decay(decay_samples(25.5, 3.78, 0.0), 0.0);
  CHECK(exact.tau == doctest::Approx(3.78).epsilon(1e-8));
  CHECK(exact.amplitude == doctest::Approx(25.5).epsilon(1e-8));
}

TEST_CASE("decay fit rejects degenerate input") {
  std::vector<Sample> flat;
  for (int i = 0; i < 10; ++i) flat.push_back({static_cast<double>(i), 1.0, 0.0});
  CHECK_THROWS_WITH_AS(fit_g2_decay(flat, 0.2), doctest::Contains("no decay signal"), NumericalError);
  CHECK_THROWS_AS(fit_g2_decay({{0, 2, 0}, {1, 1.5, 0}}, 0.2), NumericalError);
}

TEST_CASE("dephasing extraction") {
  const std::vector<double> dts{0.3, 0.66, 1, 2, 3, 4, 5, 6, 8};
  std::vector<double> s0;
  for (double t : dts) s0.push_back(2.4 - 0.05 * t);
  for (double gamma : {0.0, 0.05, 0.2}) {
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < dts.size(); ++i) {
      samples.push_back({dts[i], s0[i] / 2 * (1 + std::exp(-2 * gamma * dts[i])), 0.0});
    }
    const auto f = extract_dephasing(samples, s0);
    if (gamma == 0.0) {
      CHECK(f.gamma < 1e-6);
    } else {
      CHECK(f.gamma == doctest::Approx(gamma).epsilon(0.05));
    }

    // Rescaling time by c and gamma by 1/c leaves the residuals unchanged.
    std::vector<Sample> scaled = samples;
    for (auto& s : scaled) s.x *= 2.5;
    const auto g = extract_dephasing(scaled, s0);
    CHECK(g.gamma == doctest::Approx(f.gamma / 2.5).epsilon(1e-4).scale(1e-7));
  }

  // Noisy samples around zero dephasing yield an upper bound.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<Sample> noisy;
  for (std::size_t i = 0; i < dts.size(); ++i) noisy.push_back({dts[i], s0[i] + noise(rng), 0.03});
  const auto n = extract_dephasing(noisy, s0);
  REQUIRE(n.gamma_upper);
  CHECK(*n.gamma_upper >= n.gamma);
  CHECK(*n.gamma_upper < 0.1);

  CHECK_THROWS_AS(extract_dephasing({}, {}), NumericalError);
}

TEST_CASE("parameter estimation from rates") {
  const auto e = estimate_params(18000, 720, 4.58, 80e6, 0.1);
  CHECK(e.g == doctest::Approx(0.047).epsilon(0.001 / 0.047));
  CHECK(e.p_dc == doctest::Approx(9.0e-6).epsilon(1e-9));
  CHECK(e.eta_b0 == doctest::Approx(2.54e-4).epsilon(0.005));

  const auto one = estimate_params(8e6, 10, 1, 80e6, 0.1);
  CHECK(one.mean_photons == doctest::Approx(1.0));
  CHECK(one.g == doctest::Approx(std::asinh(1.0)));

  const auto none = estimate_params(18000, 720, 0.0, 80e6, 0.1);
  CHECK(none.eta_b0 == 0.0);
  CHECK_FALSE(none.warnings.empty());

  CHECK_THROWS(estimate_params(9e7, 720, 4.58, 80e6, 0.1));

  const auto back = predict_rates(e.g, e.p_dc, e.eta_b0, 80e6, 0.1);
  CHECK(back.stokes_hz == doctest::Approx(18000).epsilon(1e-9));
  CHECK(back.antistokes_neg_delay_hz == doctest::Approx(720).epsilon(1e-9));
  CHECK(back.coinc_hz == doctest::Approx(4.58).epsilon(1e-9));
}

TEST_CASE("retarder calibration") {
  const auto c = calibrate_retarder({{0.0, 1.0}, {1.0, 0.5}, {2.0, 0.0}});
  REQUIRE(c.points.size() == 3);
  CHECK(c.points[0].delta == doctest::Approx(0.0));
  CHECK(c.points[1].delta == doctest::Approx(std::numbers::pi / 2));
  CHECK(c.points[2].delta == doctest::Approx(std::numbers::pi));
  CHECK(c.voltages_for(std::numbers::pi / 2) == std::vector<double>{1.0});

  // Phase wraps: a second monotone branch gives a second voltage.
  std::vector<std::pair<double, double>> sweep;
  for (int i = 0; i <= 100; ++i) {
    const double v = 0.05 * i;
    const double delta = 1.2 * v;
    sweep.emplace_back(v, 0.5 * (1 + std::cos(delta)));
  }
  const auto w = calibrate_retarder(sweep);
  CHECK(w.segments.size() == 2);
  const auto vs = w.voltages_for(std::numbers::pi / 2);
  REQUIRE(vs.size() == 2);
  CHECK(vs[0] == doctest::Approx(std::numbers::pi / 2 / 1.2).epsilon(1e-2));
  CHECK(vs[1] == doctest::Approx(1.5 * std::numbers::pi / 1.2).epsilon(1e-2));

  const auto clamped = calibrate_retarder({{0.0, 1.0 + 1e-6}});
  CHECK(clamped.warnings.size() == 1);
  CHECK(clamped.points[0].delta == 0.0);
  CHECK_THROWS_AS(calibrate_retarder({{0.0, 1.01}}), NumericalError);
}

TEST_CASE("simplex minimiser") {
  const auto r = nelder_mead(
      [](const std::vector<double>& x) {
        return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
      },
      {-1.2, 1.0}, {0.5, 0.5}, 1e-16, 20000);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-5));
}
