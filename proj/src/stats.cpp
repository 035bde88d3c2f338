#include "bellsim/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "bellsim/error.hpp"
#include "bellsim/rng.hpp"

namespace bellsim::stats {

FoldedCounts fold(const CountsTable& c) {
  FoldedCounts f;
  f.pp = c.n_pp + c.n_bothA_p + c.n_bothB_p + c.n_bothAB;
  f.pm = c.n_pm + c.n_bothA_m;
  f.mp = c.n_mp + c.n_bothB_m;
  f.mm = c.n_mm;
  return f;
}

double E_from_counts(const CountsTable& counts) {
  const FoldedCounts f = fold(counts);
  const std::uint64_t total = f.total();
  if (total == 0) throw NumericalError("E: no post-selected coincidences");
  const double same = static_cast<double>(f.pp + f.mm);
  const double diff = static_cast<double>(f.pm + f.mp);
  return (same - diff) / static_cast<double>(total);
}

double S_from_counts(const BellRunData& data) {
  if (!data.mapping_valid()) throw ConfigError("mapping", "setting map is not bijective");
  double s = 0.0;
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 2; ++y) {
      const double e = E_from_counts(data.at(x, y));
      s += (x && y) ? -e : e;
    }
  }
  return s;
}

int game_score(int a, int b, int x, int y) { return ((a ^ b) == (x & y)) ? 1 : 0; }

GameTally game_tally(const BellRunData& data) {
  GameTally t;
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 2; ++y) {
      const FoldedCounts f = fold(data.at(x, y));
      // Outcome bit 0 is "+".
      const std::array<std::pair<std::uint64_t, std::array<int, 2>>, 4> cells{
          {{f.pp, {0, 0}}, {f.pm, {0, 1}}, {f.mp, {1, 0}}, {f.mm, {1, 1}}}};
      for (const auto& [n, ab] : cells) {
        t.rounds += n;
        if (game_score(ab[0], ab[1], x, y)) t.wins += n;
      }
    }
  }
  return t;
}

ConfidenceResult bell_confidence(std::uint64_t wins, std::uint64_t rounds, double alpha) {
  if (rounds == 0) throw NumericalError("bell_confidence: no post-selected rounds");
  if (wins > rounds) throw NumericalError("bell_confidence: wins exceed rounds");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
  ConfidenceResult r;
  r.n = rounds;
  r.wins = wins;
  r.alpha = alpha;
  r.t_bar = static_cast<double>(wins) / static_cast<double>(rounds);
  r.q_min = wins == 0 ? 0.0
                      : inverse_reg_inc_beta(alpha, static_cast<double>(wins),
                                             static_cast<double>(rounds - wins) + 1.0);
  r.s_min = 8.0 * r.q_min - 4.0;
  r.s_point = 8.0 * r.t_bar - 4.0;
  return r;
}

ConfidenceResult bell_confidence(const BellRunData& data, double alpha) {
  const GameTally t = game_tally(data);
  return bell_confidence(t.wins, t.rounds, alpha);
}

// ------------------------------------------------------------ incomplete beta

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// lgamma(z) minus its Stirling main term.
double stirling_correction(double z) {
  if (z < 10.0) return std::lgamma(z) - ((z - 0.5) * std::log(z) - z + kHalfLog2Pi);
  const double r = 1.0 / z;
  const double r2 = r * r;
  return r * (1.0 / 12 - r2 * (1.0 / 360 - r2 * (1.0 / 1260 - r2 * (1.0 / 1680 -
                                  r2 * (1.0 / 1188 - r2 * (691.0 / 360360 - r2 / 156))))));
}

// log(x^a (1-x)^b / B(a, b)), arranged around x0 = a/(a+b) so that large
// shape parameters do not cancel catastrophically.
double log_power_terms(double x, double a, double b) {
  const double c = a + b;
  const double x0 = a / c;
  const double la = a * std::log1p((x - x0) / x0);
  const double lb = b * std::log1p((x0 - x) * c / b);
  return la + lb + 0.5 * std::log(a * b / (2.0 * std::numbers::pi * c)) + stirling_correction(c) -
         stirling_correction(a) - stirling_correction(b);
}

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_cf(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1'000'000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("reg_inc_beta: continued fraction did not converge");
}

void check_shape(double a, double b) {
  if (!(a > 0.0 && b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw NumericalError("incomplete beta: shape parameters must be > 0");
  }
}

}  // namespace

double reg_inc_beta(double x, double a, double b) {
  check_shape(a, b);
  if (!(x >= 0.0 && x <= 1.0)) throw NumericalError("reg_inc_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_power_terms(x, a, b)) * beta_cf(x, a, b) / a;
  }
  return 1.0 - std::exp(log_power_terms(1.0 - x, b, a)) * beta_cf(1.0 - x, b, a) / b;
}

double inverse_reg_inc_beta(double p, double a, double b) {
  check_shape(a, b);
  if (!(p >= 0.0 && p <= 1.0)) throw NumericalError("inverse_reg_inc_beta: p outside [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;

  double lo = 0.0, hi = 1.0;
  double x = a / (a + b);
  for (int it = 0; it < 500; ++it) {
    const double f = reg_inc_beta(x, a, b) - p;
    if (f == 0.0) return x;
    (f > 0.0 ? hi : lo) = x;
    const double pdf = std::exp(log_power_terms(x, a, b)) / (x * (1.0 - x));
    double next = x - f / pdf;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * x || hi - lo <= 1e-15 * hi) return next;
    x = next;
  }
  throw NumericalError("inverse_reg_inc_beta: did not converge");
}

// ------------------------------------------------------------------ bootstrap

std::vector<std::uint64_t> flatten(const CountsTable& c) {
  return {c.n_pp,      c.n_pm,      c.n_mp,       c.n_mm,       c.n_bothA_p,
          c.n_bothA_m, c.n_bothB_p, c.n_bothB_m,  c.n_bothAB,   c.singles_Ap,
          c.singles_Am, c.singles_Bp, c.singles_Bm};
}

CountsTable unflatten(std::span<const std::uint64_t> v, std::uint64_t reps) {
  if (v.size() != kCountFields) throw NumericalError("unflatten: wrong field count");
  CountsTable c;
  c.n_pp = v[0];
  c.n_pm = v[1];
  c.n_mp = v[2];
  c.n_mm = v[3];
  c.n_bothA_p = v[4];
  c.n_bothA_m = v[5];
  c.n_bothB_p = v[6];
  c.n_bothB_m = v[7];
  c.n_bothAB = v[8];
  c.singles_Ap = v[9];
  c.singles_Am = v[10];
  c.singles_Bp = v[11];
  c.singles_Bm = v[12];
  c.reps = reps;
  return c;
}

BootstrapResult poisson_bootstrap(std::span<const std::uint64_t> counts,
                                  const CountStatistic& statistic, const BootstrapOptions& opts) {
  BootstrapResult r;
  const std::uint64_t key = derive_key(opts.seed, 0x626f6f74ULL, 0, 2);
  std::vector<std::uint64_t> sample(counts.size());
  double mean = 0.0, m2 = 0.0;
  double prev_mean = 0.0, prev_std = 0.0;
  std::uint64_t stable = 0;

  for (std::uint64_t i = 0; r.samples < opts.max_samples && r.discarded <= opts.max_samples; ++i) {
    PhiloxStream rng(key, i);
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] == 0) {
        sample[k] = 0;
        continue;
      }
      std::poisson_distribution<std::uint64_t> poisson(static_cast<double>(counts[k]));
      sample[k] = poisson(rng);
    }
    double value;
    try {
      value = statistic(sample);
    } catch (const NumericalError&) {
      ++r.discarded;
      continue;
    }
    ++r.samples;
    const double delta = value - mean;
    mean += delta / static_cast<double>(r.samples);
    m2 += delta * (value - mean);
    const double std = r.samples > 1 ? std::sqrt(m2 / static_cast<double>(r.samples - 1)) : 0.0;

    if (r.samples > 1) {
      // Scale by max(|mean|, std) so a statistic centred on zero still converges.
      const double scale = std::max(std::abs(mean), std);
      const bool ok = std::abs(mean - prev_mean) <= opts.rel_tol * scale &&
                      std::abs(std - prev_std) <= opts.rel_tol * std::max(std, 1e-300);
      stable = ok ? stable + 1 : 0;
    }
    prev_mean = mean;
    prev_std = std;
    if (r.samples >= opts.min_samples && stable >= opts.stable_run) {
      r.converged = true;
      break;
    }
  }
  r.mean = mean;
  r.std = prev_std;
  return r;
}

BootstrapResult poisson_bootstrap(const CountsTable& counts,
                                  const std::function<double(const CountsTable&)>& statistic,
                                  const BootstrapOptions& opts) {
  const auto flat = flatten(counts);
  return poisson_bootstrap(
      flat, [&](std::span<const std::uint64_t> v) { return statistic(unflatten(v, counts.reps)); },
      opts);
}

BootstrapResult poisson_bootstrap(const BellRunData& data,
                                  const std::function<double(const BellRunData&)>& statistic,
                                  const BootstrapOptions& opts) {
  std::vector<std::uint64_t> flat;
  for (const auto& t : data.tables) {
    const auto f = flatten(t);
    flat.insert(flat.end(), f.begin(), f.end());
  }
  return poisson_bootstrap(
      flat,
      [&](std::span<const std::uint64_t> v) {
        BellRunData d = data;
        for (int k = 0; k < 4; ++k) {
          d.tables[k] = unflatten(v.subspan(k * kCountFields, kCountFields), data.tables[k].reps);
        }
        return statistic(d);
      },
      opts);
}

}  // namespace bellsim::stats
