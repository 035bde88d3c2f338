// Acceptance run: one PASS/FAIL line per criterion. Criterion 13 (throughput)
// is reported but never affects the exit status.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "bellsim/analytic.hpp"
#include "bellsim/error.hpp"
#include "bellsim/fitting.hpp"
#include "bellsim/fock_oracle.hpp"
#include "bellsim/io.hpp"
#include "bellsim/mc_sim.hpp"
#include "bellsim/stats.hpp"
#include "bellsim/tagproc.hpp"

using namespace bellsim;
using std::numbers::pi;
namespace fs = std::filesystem;

namespace {

int failures = 0;

struct Result {
  bool pass = false;
  std::string detail;
};

void report(int id, const std::string& name, const std::function<Result()>& check, bool soft = false) {
  const auto t0 = std::chrono::steady_clock::now();
  Result r;
  try {
    r = check();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %2d %-28s %s [%.1f s]%s\n", r.pass ? "PASS" : "FAIL", id, name.c_str(), r.detail.c_str(),
              secs, soft ? " (soft, not gating)" : "");
  std::fflush(stdout);
  if (!r.pass && !soft) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

PhysicsParams measured() {
  PhysicsParams p;
  p.source = {0.047, 0.31};
  p.detectors = {0.1, 2.54e-4, 9e-6};
  p.vibration = {3.78, 0.0, 1.7e-3};
  return p;
}

analytic::MeasurementModel zero_delay(const PhysicsParams& p, double sigma) {
  auto m = analytic::MeasurementModel::at_delay(p, 0.0);
  m.sigma = sigma;
  return m;
}

std::vector<Settings> chsh_list() {
  const auto s = analytic::chsh_settings();
  return {s.begin(), s.end()};
}

stats::BellRunData bell_from(const std::vector<CountsTable>& tables, const std::vector<Settings>& settings) {
  std::vector<io::CountsRun> runs;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    io::CountsRun r;
    r.settings = settings[i];
    r.counts = tables[i];
    runs.push_back(r);
  }
  return io::bell_data(runs);
}

Result c1() {
  const double g2 = analytic::g2_analytic(zero_delay(measured(), 0.0));
  return {within(g2, 26.5, 0.2), fmt("g2 = %.4f (target 26.5 +- 0.2)", g2)};
}

Result c2() {
  const auto m = zero_delay(measured(), 0.31);
  const double v0 = analytic::visibility_alpha0(m);
  const double v4 = analytic::visibility_alpha_pi4(m, 0.31);
  return {within(v0, 0.92, 0.01) && within(v4, 0.76, 0.01),
          fmt("V0 = %.4f (0.92 +- 0.01), V_pi/4 = %.4f (0.76 +- 0.01)", v0, v4)};
}

Result c3() {
  const double s = analytic::chsh_analytic(measured(), 0.66);
  return {within(s, 2.36, 0.02), fmt("S(0.66 ps) = %.4f (target 2.36 +- 0.02)", s)};
}

Result c4() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    analytic::MeasurementModel m;
    m.g = 0.005 + 0.6 * u(rng);
    m.eta_a = 0.001 + 0.999 * u(rng);
    m.eta_b = 0.001 + 0.999 * u(rng);
    m.p_dc = 0.01 * u(rng);
    worst = std::max(worst, std::abs(analytic::visibility_alpha0(m) - analytic::v_from_g2(analytic::g2_analytic(m))));
  }
  return {worst <= 1e-12, fmt("%d draws, max |V0 - (g2-1)/(g2+1)| = %.2e (tol 1e-12)", draws, worst)};
}

Result c5() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  int max_n = 0;
  for (int i = 0; i < 100; ++i) {
    analytic::MeasurementModel m;
    m.g = 0.3 * u(rng);
    m.eta_a = u(rng);
    m.eta_b = u(rng);
    m.p_dc = 0.01 * u(rng);
    const Settings s{2 * pi * u(rng), 2 * pi * u(rng), 2 * pi * u(rng), 2 * pi * u(rng)};
    const double phi = 2 * pi * u(rng);
    const auto a = analytic::pattern_probs_fixed_phase(s, m, phi);
    const auto o = fock::oracle_pattern_probs(s, m, phi);
    max_n = std::max(max_n, o.n_max_used);
    for (int k = 0; k < 16; ++k) worst = std::max(worst, std::abs(a[k] - o.dist[k]));
  }
  return {worst <= 1e-10, fmt("100 draws g <= 0.3, max |diff| = %.2e (tol 1e-10), n_max up to %d", worst, max_n)};
}

Result c6() {
  const auto file = io::read_counts(fs::path(BELLSIM_DATA_DIR) / "bell_run_0p66ps.json");
  const auto data = io::bell_data(file.runs);
  const auto a = stats::bell_confidence(data, 0.01);
  const auto b = stats::bell_confidence(data, 5.733e-7);
  const bool ok = within(a.q_min, 0.788, 0.001) && within(a.s_min, 2.30, 0.005) && within(b.q_min, 0.779, 0.001) &&
                  within(b.s_min, 2.23, 0.005) && within(a.t_bar, 0.7951, 0.0005);
  return {ok, fmt("T = %.4f, q(0.01) = %.4f S_min = %.3f, q(5.733e-7) = %.4f S_min = %.3f", a.t_bar, a.q_min,
                  a.s_min, b.q_min, b.s_min)};
}

Result c7() {
  PhysicsParams p = analytic::ideal_params(0.172, 3.78, 1.7e-3);
  const auto w = analytic::violation_window(p);
  const auto opt = analytic::optimal_squeezing(p, 0.05, 0.4);
  const bool ok = within(w.window_ps, 18.4, 0.3) && opt.g >= 0.16 && opt.g <= 0.19;
  return {ok, fmt("window(g=0.172) = %.3f ps (target 18.4 +- 0.3); optimum g = %.4f in [0.16, 0.19], window %.3f ps",
                  w.window_ps, opt.g, opt.window_ps)};
}

Result c8() {
  const double g2 = analytic::g2_from_v(1.0 / std::sqrt(2.0));
  const double exact = 3 + 2 * std::sqrt(2.0);
  const bool ok = within(g2, exact, 1e-12) && within(analytic::v_from_g2(g2), 1 / std::sqrt(2.0), 1e-15) &&
                  within(g2, 5.85, 0.025);
  return {ok, fmt("g2 threshold = %.4f (3+2sqrt2 = %.4f; quoted ~5.85)", g2, exact)};
}

Result c9() {
  // Run length of the measured data set; 1e7 repetitions leave almost no
  // coincidences at these efficiencies.
  const std::uint64_t reps = 19'368'000'000ULL;
  const auto params = measured();
  ExperimentPlan plan;
  plan.delays_ps = {0.66};
  plan.settings_list = chsh_list();
  plan.reps_per_setting = reps;
  const auto sim = mc::simulate_counts(plan, params, 20240611);
  std::vector<CountsTable> tables;
  for (const auto& c : sim.cells) tables.push_back(c.counts);
  const auto data = bell_from(tables, plan.settings_list);
  const double s = stats::S_from_counts(data);
  stats::BootstrapOptions bo;
  bo.seed = 1;
  const auto sb = stats::poisson_bootstrap(data, [](const stats::BellRunData& d) { return stats::S_from_counts(d); }, bo);

  ExperimentPlan g2plan = plan;
  g2plan.settings_list = {Settings{}};
  const auto g2sim = mc::simulate_counts(g2plan, params, 20240612);
  const auto& t = g2sim.cells[0].counts;
  const double g2 = tags::g2_from_counts(t);
  const auto gb = stats::poisson_bootstrap(t, [](const CountsTable& c) { return tags::g2_from_counts(c); }, bo);

  const double s_ref = analytic::chsh_analytic(params, 0.66);
  const double g2_ref = analytic::g2_analytic(params, 0.66);
  const bool ok = std::abs(s - s_ref) <= 3 * sb.std && std::abs(g2 - g2_ref) <= 3 * gb.std && sb.std >= 0.015 &&
                  sb.std <= 0.06 && sb.converged && gb.converged;
  return {ok, fmt("R = %.4g/setting: S = %.4f +- %.4f vs %.4f; g2 = %.2f +- %.2f vs %.2f", static_cast<double>(reps),
                  s, sb.std, s_ref, g2, gb.std, g2_ref)};
}

Result c10() {
  // Measured efficiencies give no coincidences in 1e6 repetitions; the identity is
  // exercised with a bright source.
  PhysicsParams params;
  params.source = {0.3, 0.31};
  params.detectors = {0.5, 0.3, 1e-3};
  ExperimentPlan plan;
  plan.delays_ps = {0.66};
  plan.settings_list = chsh_list();
  plan.reps_per_setting = 1'000'000;
  const std::uint64_t seed = 99;

  const auto sim = mc::simulate_counts(plan, params, seed);
  std::vector<CountsTable> direct, via_tags;
  const fs::path dir = fs::temp_directory_path() / "bellsim_acceptance";
  fs::create_directories(dir);
  for (std::size_t s = 0; s < plan.settings_list.size(); ++s) {
    direct.push_back(sim.cells[s].counts);
    const fs::path file = dir / ("tags_s" + std::to_string(s) + ".ptag");
    {
      tags::TagWriter w(file, tags::TagFileHeader::from_plan(plan));
      mc::simulate_tags(plan, params, seed, s, 0, w);
      w.close();
    }
    via_tags.push_back(tags::reduce_file(file, tags::WindowSpec::from_plan(plan)).counts);
    fs::remove(file);
  }
  const auto a = bell_from(direct, plan.settings_list);
  const auto b = bell_from(via_tags, plan.settings_list);
  stats::BootstrapOptions bo;
  bo.seed = 3;
  auto chsh = [](const stats::BellRunData& d) { return stats::S_from_counts(d); };
  const auto ba = stats::poisson_bootstrap(a, chsh, bo);
  const auto bb = stats::poisson_bootstrap(b, chsh, bo);
  const auto ca = stats::bell_confidence(a, 0.01);
  const auto cb = stats::bell_confidence(b, 0.01);
  const bool ok = direct == via_tags && stats::S_from_counts(a) == stats::S_from_counts(b) && ba.mean == bb.mean &&
                  ba.std == bb.std && ca.q_min == cb.q_min;
  return {ok, fmt("R = 1e6: tables %s, S %.6f vs %.6f, bootstrap std %.6f vs %.6f", direct == via_tags ? "equal" : "DIFFER",
                  stats::S_from_counts(a), stats::S_from_counts(b), ba.std, bb.std)};
}

Result c11() {
  const double sigma = 0.2 * fit::kFwhmToSigma;
  std::vector<fit::Sample> g2;
  for (double t = -1.0; t <= 20.0; t += 0.2) g2.push_back({t, 1 + 25.5 * fit::emg(t, 3.78, sigma), 0.0});
  const auto f = fit::fit_g2_decay(g2, 0.2);
  bool ok = std::abs(f.tau - 3.78) <= 0.01 * 3.78;
  std::string detail = fmt("tau = %.5f ps", f.tau);

  const auto p = measured();
  std::vector<double> s0;
  std::vector<double> dts;
  for (double t = 0.3; t <= 8.0 + 1e-9; t += 0.5) {
    dts.push_back(t);
    s0.push_back(analytic::chsh_analytic(p, t));
  }
  for (double gamma : {0.0, 0.05, 0.2}) {
    std::vector<fit::Sample> samples;
    for (std::size_t i = 0; i < dts.size(); ++i) {
      samples.push_back({dts[i], analytic::chsh_dephasing_curve(s0[i], gamma, dts[i]), 0.0});
    }
    const auto d = fit::extract_dephasing(samples, s0);
    ok = ok && (gamma == 0.0 ? d.gamma <= 1e-6 : std::abs(d.gamma - gamma) <= 0.05 * gamma);
    detail += fmt("; gamma %.2f -> %.5f", gamma, d.gamma);
  }
  return {ok, detail};
}

Result c12() {
  const auto e = fit::estimate_params(18000, 720, 4.58, 80e6, 0.1);
  const bool ok = within(e.g, 0.047, 0.001) && within(e.p_dc, 9.0e-6, 0.05e-6) && within(e.eta_b0, 2.54e-4, 0.005e-4);
  return {ok, fmt("g = %.4f, p_dc = %.2e, eta_B = %.3e", e.g, e.p_dc, e.eta_b0)};
}

Result c13() {
  const fs::path dir = fs::temp_directory_path() / "bellsim_acceptance";
  fs::create_directories(dir);
  const fs::path file = dir / "throughput.ptag";
  const std::uint64_t n = 20'000'000;
  {
    tags::TagWriter w(file, tags::TagFileHeader{});
    ExperimentPlan plan;
    std::mt19937_64 rng(13);
    for (std::uint64_t k = 0; w.records_written() < n; ++k) {
      const auto s = plan.sync_time(k);
      w.write({s, 0});
      w.write({s + 2500 + rng() % 1000, static_cast<std::uint8_t>(1 + rng() % 4)});
    }
    w.close();
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = tags::reduce_file(file, tags::WindowSpec{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fs::remove(file);
  const double rate = static_cast<double>(n) / secs;
  return {rate >= 1e7 && r.syncs == n / 2, fmt("%.3g records/s single core (target 1e7)", rate)};
}

}  // namespace

int main() {
  std::printf("acceptance criteria\n");
  report(1, "g2 closed form", c1);
  report(2, "visibilities", c2);
  report(3, "CHSH prediction", c3);
  report(4, "visibility identity", c4);
  report(5, "Fock oracle equivalence", c5);
  report(6, "finite statistics", c6);
  report(7, "ideal-conditions window", c7);
  report(8, "visibility threshold", c8);
  report(9, "Monte Carlo consistency", c9);
  report(10, "pipeline identity", c10);
  report(11, "fit recovery", c11);
  report(12, "parameter estimation", c12);
  report(13, "tag throughput", c13, true);
  std::printf("%d gating criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
