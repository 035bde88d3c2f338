#include "bellsim/fock_oracle.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "bellsim/error.hpp"

namespace bellsim::fock {

namespace {

using cd = std::complex<double>;

double log_factorial(int n) { return std::lgamma(n + 1.0); }

cd ipow(cd z, int n) {
  cd r{1.0, 0.0};
  for (int i = 0; i < n; ++i) r *= z;
  return r;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::round(std::exp(log_factorial(n) - log_factorial(k) - log_factorial(n - k)));
}

// Fock amplitudes over (m, N - m) of (u00 x + u10 y)^n1 (u01 x + u11 y)^n2 |0>
// normalised by sqrt(n1! n2!), i.e. |n1, n2> in the rotated basis.
std::vector<cd> rotated_amplitudes(int n1, int n2, cd u00, cd u10, cd u01, cd u11) {
  const int total = n1 + n2;
  std::vector<cd> out(total + 1, cd{});
  for (int j = 0; j <= n1; ++j) {
    const cd left = binomial(n1, j) * ipow(u00, j) * ipow(u10, n1 - j);
    for (int k = 0; k <= n2; ++k) {
      out[j + k] += left * binomial(n2, k) * ipow(u01, k) * ipow(u11, n2 - k);
    }
  }
  const double norm = -0.5 * (log_factorial(n1) + log_factorial(n2));
  for (int m = 0; m <= total; ++m) {
    out[m] *= std::exp(norm + 0.5 * (log_factorial(m) + log_factorial(total - m)));
  }
  return out;
}

}  // namespace

double truncation_tail(double lambda, int n_max) {
  // Total pair number N = n1 + n2 has P(N) = (1 - lambda)^2 (N + 1) lambda^N.
  double tail = 0.0;
  const double base = (1.0 - lambda) * (1.0 - lambda);
  for (int n = n_max + 1; n < n_max + 4000; ++n) {
    const double term = base * (n + 1) * std::pow(lambda, n);
    tail += term;
    if (term < 1e-30 * (tail + 1e-300)) break;
  }
  return tail;
}

OracleResult oracle_pattern_probs(const Settings& settings, const analytic::MeasurementModel& model,
                                  double phi, const FockTruncation& trunc) {
  const double lambda = std::tanh(model.g) * std::tanh(model.g);
  int n_max = trunc.n_max;
  if (n_max < 1 && model.g > 0.0) throw NumericalError("fock oracle: n_max = 0 truncates a nonzero source");
  if (n_max < 0) n_max = 0;
  double tail = lambda > 0.0 ? truncation_tail(lambda, n_max) : 0.0;
  while (tail > trunc.tail_tol && trunc.adaptive && n_max < kMaxPhotons) {
    n_max = std::min(2 * n_max, kMaxPhotons);
    tail = truncation_tail(lambda, n_max);
  }
  if (tail > trunc.tail_tol) throw NumericalError("fock oracle: truncation tolerance not met");

  const analytic::SchmidtMatrix sm = analytic::schmidt_matrix(settings, phi, model.g);
  Eigen::Matrix2cd m;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) m(r, c) = cd(static_cast<double>(sm.m[r][c].real()),
                                             static_cast<double>(sm.m[r][c].imag()));
  }
  Eigen::JacobiSVD<Eigen::Matrix2cd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix2cd u = svd.matrixU();
  const Eigen::Matrix2cd v = svd.matrixV().conjugate();
  const Eigen::Vector2d s = svd.singularValues();
  const double norm = std::sqrt((1.0 - s(0) * s(0)) * (1.0 - s(1) * s(1)));

  const std::array<double, 4> eta = model.efficiencies();
  auto click_prob = [&](int d, int photons) {
    return 1.0 - (1.0 - model.p_dc) * std::pow(1.0 - eta[d], photons);
  };

  OracleResult out;
  out.n_max_used = n_max;
  out.tail_bound = tail;
  for (int total = 0; total <= n_max; ++total) {
    // psi(m_alice, m_bob): photons in A and B; A_perp and B_perp hold the rest.
    std::vector<cd> psi((total + 1) * (total + 1), cd{});
    for (int n1 = 0; n1 <= total; ++n1) {
      const int n2 = total - n1;
      const cd weight = norm * std::pow(s(0), n1) * std::pow(s(1), n2);
      if (weight == cd{}) continue;
      const auto alice = rotated_amplitudes(n1, n2, u(0, 0), u(1, 0), u(0, 1), u(1, 1));
      const auto bob = rotated_amplitudes(n1, n2, v(0, 0), v(1, 0), v(0, 1), v(1, 1));
      for (int a = 0; a <= total; ++a) {
        for (int b = 0; b <= total; ++b) psi[a * (total + 1) + b] += weight * alice[a] * bob[b];
      }
    }
    for (int a = 0; a <= total; ++a) {
      for (int b = 0; b <= total; ++b) {
        const double w = std::norm(psi[a * (total + 1) + b]);
        if (w == 0.0) continue;
        const std::array<double, 4> click{click_prob(0, a), click_prob(1, total - a),
                                          click_prob(2, b), click_prob(3, total - b)};
        for (int pattern = 0; pattern < 16; ++pattern) {
          double p = w;
          for (int d = 0; d < 4; ++d) {
            p *= ((pattern >> (3 - d)) & 1) ? click[d] : 1.0 - click[d];
          }
          out.dist.p[pattern] += p;
        }
      }
    }
  }
  return out;
}

OracleResult oracle_pattern_probs(const Settings& settings, const PhysicsParams& params,
                                  double delta_t, double phi, const FockTruncation& trunc) {
  return oracle_pattern_probs(settings, analytic::MeasurementModel::at_delay(params, delta_t), phi,
                              trunc);
}

}  // namespace bellsim::fock
