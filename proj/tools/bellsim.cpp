#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "bellsim/analytic.hpp"
#include "bellsim/error.hpp"
#include "bellsim/fitting.hpp"
#include "bellsim/fock_oracle.hpp"
#include "bellsim/io.hpp"
#include "bellsim/mc_sim.hpp"
#include "bellsim/stats.hpp"
#include "bellsim/tagproc.hpp"

namespace fs = std::filesystem;
using namespace bellsim;
using io::Json;

namespace {

struct Global {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "json";
};

// Numbers that cannot be represented in JSON become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

io::Config require_config(const Global& g) {
  if (g.config.empty()) throw ConfigError("--config", "a configuration file is required");
  return io::load_config(g.config);
}

std::uint64_t seed_of(const Global& g, const io::Config& c) { return g.seed.value_or(c.plan.seed); }

class Output {
 public:
  Output(const Global& g, std::string command, std::vector<std::string> inputs)
      : dir_(g.out), format_(g.format) {
    manifest_.command = std::move(command);
    manifest_.inputs = std::move(inputs);
    manifest_.started = io::utc_timestamp();
    fs::create_directories(dir_);
  }

  void set_config(const Json& cfg, std::uint64_t seed) {
    manifest_.config_hash = io::config_hash(cfg);
    manifest_.seed = seed;
  }

  bool csv() const { return format_ == "csv"; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  void json(const std::string& name, const Json& j) {
    io::write_json(dir_ / name, j);
    manifest_.outputs.push_back((dir_ / name).string());
  }
  void text(const std::string& name, const std::string& s) {
    io::write_text(dir_ / name, s);
    manifest_.outputs.push_back((dir_ / name).string());
  }
  void record(const fs::path& p) { manifest_.outputs.push_back(p.string()); }

  /// Manifest sidecar; timestamps live only here.
  void finish() {
    manifest_.finished = io::utc_timestamp();
    io::write_json(dir_ / (manifest_.command + ".manifest.json"), io::to_json(manifest_));
  }

 private:
  fs::path dir_;
  std::string format_;
  io::RunManifest manifest_;
};

std::vector<std::vector<double>> read_csv_numbers(const fs::path& path, std::size_t min_cols) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (row.size() < min_cols) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(min_cols) + " columns");
    }
    rows.push_back(row);
  }
  return rows;
}

std::optional<std::array<int, 2>> chsh_bits(const Settings& s) {
  const stats::BellRunData ref;
  std::array<int, 2> xy{-1, -1};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(s.theta() - ref.theta[k]) < 1e-9) xy[0] = k;
    if (std::abs(s.varphi() - ref.varphi[k]) < 1e-9) xy[1] = k;
  }
  if (xy[0] < 0 || xy[1] < 0) return std::nullopt;
  return xy;
}

// ------------------------------------------------------------------- predict

struct PredictArgs {
  std::optional<double> delay;
  double curve_min = 0.0, curve_max = 20.0, curve_step = 0.25;
  double horizon = 500.0;
  bool optimize_g = false;
};

int cmd_predict(const Global& g, const PredictArgs& a) {
  const io::Config cfg = require_config(g);
  Output out(g, "predict", {g.config});
  out.set_config(io::to_json(cfg), seed_of(g, cfg));
  const PhysicsParams& p = cfg.physics;
  const double delay = a.delay.value_or(cfg.plan.delays_ps.empty() ? 0.0 : cfg.plan.delays_ps.front());
  const auto model = analytic::MeasurementModel::at_delay(p, delay);

  Json r;
  r["delay_ps"] = delay;
  r["eta_b"] = model.eta_b;
  r["sigma_tot"] = model.sigma;
  auto guarded = [](auto&& f) -> Json {
    try {
      return num(f());
    } catch (const NumericalError&) {
      return nullptr;
    }
  };
  r["g2"] = guarded([&] { return analytic::g2_analytic(model); });
  r["visibility_alpha0"] = guarded([&] { return analytic::visibility_alpha0(model); });
  r["visibility_alpha_pi4"] = guarded([&] { return analytic::visibility_alpha_pi4(model, model.sigma); });
  r["visibility_alpha_pi4_taylor"] = guarded([&] {
    return analytic::visibility_alpha_pi4(model, model.sigma, analytic::VisibilityMode::kTaylor);
  });

  Json e_table = Json::array();
  for (const auto& s : analytic::chsh_settings()) {
    e_table.push_back({{"alpha", s.alpha}, {"beta", s.beta}, {"theta", s.theta()}, {"varphi", s.varphi()},
                       {"E", guarded([&] { return analytic::correlation_E(s.alpha, s.beta, model); })}});
  }
  r["E"] = e_table;
  const Json s_here = guarded([&] { return analytic::chsh(model); });
  r["S"] = s_here;
  r["S_marginal_form"] =
      guarded([&] { return analytic::chsh(model, analytic::CorrelatorForm::kMarginalNormalized); });
  r["violation"] = s_here.is_number() && s_here.get<double>() > 2.0;

  Json at_plan = Json::array();
  for (double d : cfg.plan.delays_ps) {
    at_plan.push_back({{"delay_ps", d}, {"S", guarded([&] { return analytic::chsh_analytic(p, d); })}});
  }
  r["S_at_plan_delays"] = at_plan;

  std::ostringstream curve_csv;
  curve_csv << "delay_ps,S,g2,eta_b\n";
  Json curve = Json::array();
  if (!(a.curve_step > 0.0)) throw ConfigError("--curve-step", "must be > 0");
  for (int i = 0;; ++i) {
    const double d = a.curve_min + i * a.curve_step;
    if (d > a.curve_max + 1e-12) break;
    const auto m = analytic::MeasurementModel::at_delay(p, d);
    const Json s = guarded([&] { return analytic::chsh(m); });
    const Json g2 = guarded([&] { return analytic::g2_analytic(m); });
    curve.push_back({{"delay_ps", d}, {"S", s}, {"g2", g2}, {"eta_b", m.eta_b}});
    curve_csv << d << ',' << (s.is_number() ? std::to_string(s.get<double>()) : "nan") << ','
              << (g2.is_number() ? std::to_string(g2.get<double>()) : "nan") << ',' << m.eta_b << '\n';
  }
  r["S_curve"] = curve;

  analytic::WindowOptions wopts;
  wopts.horizon_ps = a.horizon;
  auto window_json = [&](const analytic::ViolationWindow& w) {
    return Json{{"window_ps", w.window_ps}, {"violated_at_zero", w.violated_at_zero}, {"capped", w.capped}};
  };
  try {
    r["violation_window"] = window_json(analytic::violation_window(p, wopts));
  } catch (const NumericalError&) {
    r["violation_window"] = nullptr;
  }
  try {
    r["ideal_violation_window"] = window_json(analytic::ideal_violation_window(p, wopts));
  } catch (const NumericalError&) {
    r["ideal_violation_window"] = nullptr;
  }
  if (a.optimize_g) {
    const auto opt = analytic::optimal_squeezing(p, 0.02, 0.5, wopts);
    r["ideal_optimum"] = {{"g", opt.g}, {"window_ps", opt.window_ps}};
  }

  out.json("predict.json", r);
  out.text("s_curve.csv", curve_csv.str());
  if (out.csv()) {
    std::ostringstream e;
    e << "alpha,beta,E\n";
    for (const auto& row : e_table) {
      e << row["alpha"].get<double>() << ',' << row["beta"].get<double>() << ','
        << (row["E"].is_number() ? std::to_string(row["E"].get<double>()) : "nan") << '\n';
    }
    out.text("predict_E.csv", e.str());
  }
  out.finish();
  std::cout << r.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------------ simulate

struct SimulateArgs {
  bool tags = false;
  bool no_sync = false;
  double jitter = 0.0;
  std::string sampling = "mixture";
  unsigned threads = 0;
};

int cmd_simulate(const Global& g, const SimulateArgs& a) {
  const io::Config cfg = require_config(g);
  if (cfg.plan.settings_list.empty() || cfg.plan.delays_ps.empty()) {
    throw ConfigError("plan", "simulate needs at least one setting and one delay");
  }
  const std::uint64_t seed = seed_of(g, cfg);
  Output out(g, "simulate", {g.config});
  out.set_config(io::to_json(cfg), seed);

  mc::SimOptions opts;
  opts.threads = a.threads;
  opts.map = cfg.map;
  if (a.sampling == "per-rep") {
    opts.sampling = mc::PhaseSampling::kPerRepetition;
  } else if (a.sampling != "mixture") {
    throw ConfigError("--sampling", "expected mixture or per-rep");
  }

  if (a.tags) {
    Json files = Json::array();
    const auto header = tags::TagFileHeader::from_plan(cfg.plan);
    for (std::size_t s = 0; s < cfg.plan.settings_list.size(); ++s) {
      for (std::size_t d = 0; d < cfg.plan.delays_ps.size(); ++d) {
        const std::string name = "tags_s" + std::to_string(s) + "_d" + std::to_string(d) +
                                 (out.csv() ? ".csv" : ".ptag");
        tags::TagWriter writer(out.path(name), header);
        mc::TagSimOptions topts;
        topts.jitter_std_ps = a.jitter;
        topts.emit_syncs = !a.no_sync;
        topts.sim = opts;
        const auto rep = mc::simulate_tags(cfg.plan, cfg.physics, seed, s, d, writer, topts);
        writer.close();
        out.record(out.path(name));
        files.push_back({{"file", name}, {"setting_index", s}, {"delay_index", d},
                         {"delay_ps", cfg.plan.delays_ps[d]}, {"records", rep.records},
                         {"syncs", rep.syncs}, {"clicks", rep.clicks}});
      }
    }
    const Json summary{{"seed", seed}, {"jitter_std_ps", a.jitter}, {"files", files}};
    out.json("tags.json", summary);
    out.finish();
    std::cout << summary.dump(2) << '\n';
    return 0;
  }

  const auto sim = mc::simulate_counts(cfg.plan, cfg.physics, seed, opts);
  io::CountsFile file;
  Json tallies = Json::array();
  for (const auto& cell : sim.cells) {
    io::CountsRun run;
    run.settings = cell.settings;
    run.delay_ps = cell.delay_ps;
    run.seed = seed;
    run.counts = cell.counts;
    if (const auto xy = chsh_bits(cell.settings)) {
      run.x = (*xy)[0];
      run.y = (*xy)[1];
    }
    file.runs.push_back(run);
    tallies.push_back(cell.tally);
  }
  file.extra = Json{{"pattern_tallies", tallies}};
  const Json j = io::to_json(file);
  out.json("counts.json", j);
  if (out.csv()) {
    std::ostringstream c;
    c << "alpha,beta,delay_ps,n_pp,n_pm,n_mp,n_mm,n_bothA_p,n_bothA_m,n_bothB_p,n_bothB_m,n_bothAB,"
         "singles_Ap,singles_Am,singles_Bp,singles_Bm,reps\n";
    for (const auto& r : file.runs) {
      const auto& t = r.counts;
      c << r.settings.alpha << ',' << r.settings.beta << ',' << r.delay_ps << ',' << t.n_pp << ','
        << t.n_pm << ',' << t.n_mp << ',' << t.n_mm << ',' << t.n_bothA_p << ',' << t.n_bothA_m << ','
        << t.n_bothB_p << ',' << t.n_bothB_m << ',' << t.n_bothAB << ',' << t.singles_Ap << ','
        << t.singles_Am << ',' << t.singles_Bp << ',' << t.singles_Bm << ',' << t.reps << '\n';
    }
    out.text("counts.csv", c.str());
  }
  out.finish();
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --------------------------------------------------------------------- count

struct CountArgs {
  std::vector<std::string> inputs;
  std::optional<std::int64_t> offset, halfwidth;
  std::string sync_mode = "auto";
  std::optional<std::size_t> setting_index, delay_index;
  std::optional<std::uint64_t> expected_reps;
};

int cmd_count(const Global& g, const CountArgs& a) {
  std::optional<io::Config> cfg;
  if (!g.config.empty()) cfg = io::load_config(g.config);
  const ExperimentPlan plan = cfg ? cfg->plan : ExperimentPlan{};
  tags::WindowSpec window = tags::WindowSpec::from_plan(plan);
  if (a.offset) window.offset_ps = *a.offset;
  if (a.halfwidth) window.halfwidth_ps = *a.halfwidth;
  if (2 * window.halfwidth_ps >= plan.bin_separation_ps && !a.offset) {
    throw ConfigError("--halfwidth", "windows overlap (need halfwidth < bin_separation/2)");
  }
  tags::SyncMode mode = tags::SyncMode::kAuto;
  if (a.sync_mode == "sync") {
    mode = tags::SyncMode::kSyncChannel;
  } else if (a.sync_mode == "period") {
    mode = tags::SyncMode::kHeaderPeriod;
  } else if (a.sync_mode != "auto") {
    throw ConfigError("--sync-mode", "expected auto, sync or period");
  }

  Output out(g, "count", a.inputs);
  out.set_config(cfg ? io::to_json(*cfg) : Json::object(), cfg ? seed_of(g, *cfg) : g.seed.value_or(0));
  io::CountsFile file;
  Json diag = Json::array();
  const std::regex cell_name(R"(tags_s(\d+)_d(\d+))");
  for (const auto& input : a.inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = tags::reduce_file(input, window, mode, plan.rep_period_num, plan.rep_period_den,
                                       a.expected_reps.value_or(plan.reps_per_setting));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    io::CountsRun run;
    run.counts = rep.counts;
    std::optional<std::size_t> si = a.setting_index, di = a.delay_index;
    std::smatch m;
    const std::string stem = fs::path(input).stem().string();
    if (!si && std::regex_search(stem, m, cell_name)) {
      si = std::stoul(m[1]);
      di = std::stoul(m[2]);
    }
    if (cfg && si && *si < cfg->plan.settings_list.size()) {
      run.settings = cfg->plan.settings_list[*si];
      if (const auto xy = chsh_bits(run.settings)) {
        run.x = (*xy)[0];
        run.y = (*xy)[1];
      }
    }
    if (cfg && di && *di < cfg->plan.delays_ps.size()) run.delay_ps = cfg->plan.delays_ps[*di];
    if (cfg) run.seed = seed_of(g, *cfg);
    file.runs.push_back(run);

    const std::uint64_t records = rep.syncs + rep.clicks_in_window + rep.clicks_outside_window +
                                  rep.clicks_before_first_sync;
    diag.push_back({{"input", input},
                    {"mode", rep.mode_used == tags::SyncMode::kSyncChannel ? "sync" : "period"},
                    {"syncs", rep.syncs},
                    {"clicks_in_window", rep.clicks_in_window},
                    {"clicks_outside_window", rep.clicks_outside_window},
                    {"clicks_before_first_sync", rep.clicks_before_first_sync},
                    {"records", records}});
    std::cerr << input << ": " << records << " records in " << secs << " s";
    if (secs > 0) std::cerr << " (" << records / secs / 1e6 << " M records/s)";
    std::cerr << '\n';
    if (rep.clicks_before_first_sync) {
      std::cerr << "warning: " << rep.clicks_before_first_sync << " clicks before the first sync\n";
    }
  }
  file.extra = Json{{"reduction", diag}, {"window", {{"offset_ps", window.offset_ps}, {"halfwidth_ps", window.halfwidth_ps}}}};
  const Json j = io::to_json(file);
  out.json("counts.json", j);
  out.finish();
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string input;
  std::vector<double> alphas{0.01, 5.733e-7};
  double bootstrap_tol = 1e-5;
  bool bootstrap = true;
};

int cmd_analyze(const Global& g, const AnalyzeArgs& a) {
  const io::CountsFile file = io::read_counts(a.input);
  Output out(g, "analyze", {a.input});
  out.set_config(io::read_json(a.input), g.seed.value_or(0));

  Json groups = Json::array();
  std::ostringstream csv;
  csv << "delay_ps,S,S_boot_std,t_bar";
  for (double al : a.alphas) csv << ",s_min_alpha_" << al;
  csv << '\n';

  for (double delay : io::delays_in(file)) {
    std::vector<io::CountsRun> runs;
    for (const auto& r : file.runs) {
      if (r.delay_ps == delay) runs.push_back(r);
    }
    Json grp{{"delay_ps", delay}};
    Json per_run = Json::array();
    for (const auto& r : runs) {
      Json jr{{"setting", io::to_json(r.settings)}};
      if (r.x) jr["x"] = *r.x;
      if (r.y) jr["y"] = *r.y;
      try {
        jr["E"] = stats::E_from_counts(r.counts);
      } catch (const NumericalError&) {
        jr["E"] = nullptr;
      }
      try {
        jr["g2"] = tags::g2_from_counts(r.counts);
      } catch (const NumericalError&) {
        jr["g2"] = nullptr;
      }
      jr["post_selected"] = r.counts.post_selected();
      per_run.push_back(jr);
    }
    grp["runs"] = per_run;

    std::optional<stats::BellRunData> data;
    try {
      data = io::bell_data(runs);
    } catch (const ConfigError& e) {
      grp["chsh"] = nullptr;
      grp["note"] = e.what();
    }
    if (data) {
      const double s = stats::S_from_counts(*data);
      Json chsh{{"S", s}};
      Json e_xy = Json::array();
      for (int x = 0; x < 2; ++x) {
        for (int y = 0; y < 2; ++y) {
          e_xy.push_back({{"x", x}, {"y", y}, {"theta", data->theta[x]}, {"varphi", data->varphi[y]},
                          {"E", stats::E_from_counts(data->at(x, y))}});
        }
      }
      chsh["E"] = e_xy;
      double boot_std = std::nan("");
      if (a.bootstrap) {
        stats::BootstrapOptions bo;
        bo.rel_tol = a.bootstrap_tol;
        bo.seed = g.seed.value_or(0);
        const auto b = stats::poisson_bootstrap(
            *data, [](const stats::BellRunData& d) { return stats::S_from_counts(d); }, bo);
        boot_std = b.std;
        chsh["bootstrap"] = {{"mean", b.mean}, {"std", b.std}, {"samples", b.samples},
                             {"discarded", b.discarded}, {"converged", b.converged},
                             {"high_discard_rate", b.high_discard_rate()}};
      }
      Json conf = Json::array();
      const auto tally = stats::game_tally(*data);
      csv << delay << ',' << s << ',' << boot_std << ',' << tally.t_bar();
      for (double al : a.alphas) {
        const auto c = stats::bell_confidence(*data, al);
        conf.push_back({{"alpha", c.alpha}, {"t_bar", c.t_bar}, {"q_min", c.q_min}, {"s_min", c.s_min},
                        {"s_point", c.s_point}, {"n", c.n}, {"wins", c.wins}});
        csv << ',' << c.s_min;
      }
      csv << '\n';
      chsh["confidence"] = conf;
      grp["chsh"] = chsh;
    }
    groups.push_back(grp);
  }
  const Json result{{"input", a.input}, {"delays", groups}};
  out.json("analysis.json", result);
  if (out.csv()) out.text("analysis.csv", csv.str());
  out.finish();
  std::cout << result.dump(2) << '\n';
  return 0;
}

// ----------------------------------------------------------------------- fit

struct FitArgs {
  std::string input;
  std::string kind = "g2";
  double irf_fwhm = 0.2;
};

int cmd_fit(const Global& g, const FitArgs& a) {
  Output out(g, "fit", {a.input});
  Json result;
  if (a.kind == "g2") {
    const auto rows = read_csv_numbers(a.input, 2);
    std::vector<fit::Sample> samples;
    for (const auto& r : rows) samples.push_back({r[0], r[1], r.size() > 2 ? r[2] : 0.0});
    const auto f = fit::fit_g2_decay(samples, a.irf_fwhm);
    result = {{"kind", "g2_decay"}, {"amplitude", f.amplitude}, {"tau_ps", f.tau},
              {"irf_fwhm_ps", a.irf_fwhm}, {"irf_sigma_ps", f.irf_sigma}, {"baseline", f.baseline},
              {"residual_norm", f.residual_norm}, {"evaluations", f.evaluations}};
    out.set_config(Json{{"kind", a.kind}, {"irf_fwhm", a.irf_fwhm}}, 0);
  } else if (a.kind == "dephasing") {
    const auto rows = read_csv_numbers(a.input, 2);
    std::vector<fit::Sample> samples;
    std::vector<double> s0;
    std::optional<io::Config> cfg;
    for (const auto& r : rows) {
      samples.push_back({r[0], r[1], r.size() > 2 ? r[2] : 0.0});
      if (r.size() > 3) {
        s0.push_back(r[3]);
      } else {
        if (!cfg) cfg = require_config(g);
        PhysicsParams p = cfg->physics;
        p.vibration.gamma_deph = 0.0;
        s0.push_back(analytic::chsh_analytic(p, r[0]));
      }
    }
    const auto f = fit::extract_dephasing(samples, s0);
    result = {{"kind", "dephasing"}, {"gamma_per_ps", f.gamma}, {"objective", f.objective},
              {"residuals", f.residuals}, {"s0", s0}};
    result["gamma_upper_per_ps"] = f.gamma_upper ? Json(*f.gamma_upper) : Json(nullptr);
    Json scan = Json::array();
    for (std::size_t i = 0; i < f.grid.size(); ++i) scan.push_back({f.grid[i], f.grid_objective[i]});
    result["gamma_scan"] = scan;
    out.set_config(cfg ? io::to_json(*cfg) : Json{{"kind", a.kind}}, 0);
  } else {
    throw ConfigError("--kind", "expected g2 or dephasing");
  }
  out.json("fit.json", result);
  out.finish();
  std::cout << result.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------------ estimate

struct EstimateArgs {
  double stokes = 0, antistokes = 0, coinc = 0, rep_rate = 80.7e6, eta_a = 0.1;
};

int cmd_estimate(const Global& g, const EstimateArgs& a) {
  Output out(g, "estimate", {});
  const Json inputs{{"stokes_rate_hz", a.stokes}, {"antistokes_neg_delay_rate_hz", a.antistokes},
                    {"coinc_rate_hz", a.coinc}, {"rep_rate_hz", a.rep_rate}, {"eta_a", a.eta_a}};
  out.set_config(inputs, 0);
  const auto e = fit::estimate_params(a.stokes, a.antistokes, a.coinc, a.rep_rate, a.eta_a);
  const auto back = fit::predict_rates(e.g, e.p_dc, e.eta_b0, a.rep_rate, a.eta_a);
  const Json result{{"inputs", inputs},
                    {"mean_photons", e.mean_photons},
                    {"g", e.g},
                    {"p_dc", e.p_dc},
                    {"eta_b0", e.eta_b0},
                    {"warnings", e.warnings},
                    {"predicted_rates",
                     {{"stokes_rate_hz", back.stokes_hz},
                      {"antistokes_neg_delay_rate_hz", back.antistokes_neg_delay_hz},
                      {"coinc_rate_hz", back.coinc_hz}}}};
  for (const auto& w : e.warnings) std::cerr << "warning: " << w << '\n';
  out.json("estimate.json", result);
  out.finish();
  std::cout << result.dump(2) << '\n';
  return 0;
}

// -------------------------------------------------------------- calibrate-vr

struct CalibrateArgs {
  std::string input;
  std::vector<double> targets;
};

int cmd_calibrate(const Global& g, const CalibrateArgs& a) {
  Output out(g, "calibrate-vr", {a.input});
  out.set_config(Json{{"targets", a.targets}}, 0);
  const auto rows = read_csv_numbers(a.input, 2);
  std::vector<std::pair<double, double>> samples;
  for (const auto& r : rows) samples.emplace_back(r[0], r[1]);
  const auto cal = fit::calibrate_retarder(samples);
  Json pts = Json::array();
  std::ostringstream csv;
  csv << "voltage,transmission,delta\n";
  for (const auto& p : cal.points) {
    pts.push_back({{"voltage", p.voltage}, {"transmission", p.transmission}, {"delta", p.delta}});
    csv << p.voltage << ',' << p.transmission << ',' << p.delta << '\n';
  }
  Json segs = Json::array();
  for (const auto& [lo, hi] : cal.segments) {
    segs.push_back({{"v_start", cal.points[lo].voltage}, {"v_end", cal.points[hi].voltage}});
  }
  Json lookups = Json::array();
  for (double t : a.targets) lookups.push_back({{"delta", t}, {"voltages", cal.voltages_for(t)}});
  const Json result{{"points", pts}, {"segments", segs}, {"lookups", lookups}, {"warnings", cal.warnings}};
  for (const auto& w : cal.warnings) std::cerr << "warning: " << w << '\n';
  out.json("calibration.json", result);
  if (out.csv()) out.text("calibration.csv", csv.str());
  out.finish();
  std::cout << result.dump(2) << '\n';
  return 0;
}

// -------------------------------------------------------------------- oracle

struct OracleArgs {
  double alpha = 0, beta = 0, phi_s = 0, phi_a = 0, phi = 0, delay = 0;
  int n_max = 6;
};

int cmd_oracle(const Global& g, const OracleArgs& a) {
  const io::Config cfg = require_config(g);
  Output out(g, "oracle", {g.config});
  out.set_config(io::to_json(cfg), 0);
  const Settings s{a.alpha, a.phi_s, a.beta, a.phi_a};
  const auto model = analytic::MeasurementModel::at_delay(cfg.physics, a.delay);
  const auto an = analytic::pattern_probs_fixed_phase(s, model, a.phi);
  fock::FockTruncation trunc;
  trunc.n_max = a.n_max;
  const auto orc = fock::oracle_pattern_probs(s, model, a.phi, trunc);
  Json rows = Json::array();
  double worst = 0.0;
  for (int k = 0; k < 16; ++k) {
    const ClickPattern p(static_cast<std::uint8_t>(k));
    const double diff = std::abs(an.p[k] - orc.dist.p[k]);
    worst = std::max(worst, diff);
    rows.push_back({{"pattern", k},
                    {"clicks", {p.clicked(Detector::kA), p.clicked(Detector::kAPerp),
                                p.clicked(Detector::kB), p.clicked(Detector::kBPerp)}},
                    {"analytic", an.p[k]},
                    {"oracle", orc.dist.p[k]},
                    {"abs_diff", diff}});
  }
  const Json result{{"settings", io::to_json(s)}, {"phi", a.phi}, {"delay_ps", a.delay},
                    {"n_max_used", orc.n_max_used}, {"tail_bound", orc.tail_bound},
                    {"max_abs_diff", worst}, {"patterns", rows}};
  out.json("oracle.json", result);
  out.finish();
  std::cout << result.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon-phonon Bell experiment simulator and analysis toolkit", "bellsim"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "RNG seed (overrides plan.seed)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--format", g.format, "Tabular output format")->check(CLI::IsMember({"json", "csv"}));
  app.set_version_flag("--version", io::kToolVersion);

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Analytic predictions: g2, visibilities, E, S(dt), windows");
  predict->add_option("--delay", pa.delay, "Delay for point predictions (ps)");
  predict->add_option("--curve-min", pa.curve_min, "S(dt) curve start (ps)");
  predict->add_option("--curve-max", pa.curve_max, "S(dt) curve end (ps)");
  predict->add_option("--curve-step", pa.curve_step, "S(dt) curve step (ps)");
  predict->add_option("--horizon", pa.horizon, "Violation-window search horizon (ps)");
  predict->add_flag("--optimize-g", pa.optimize_g, "Scan g for the longest ideal violation window");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo counts or time-tag streams");
  simulate->add_flag("--tags", sa.tags, "Write time-tag files instead of counts");
  simulate->add_flag("--no-sync", sa.no_sync, "Omit sync records (reduce with --sync-mode period)");
  simulate->add_option("--jitter", sa.jitter, "Gaussian timing jitter std (ps)");
  simulate->add_option("--sampling", sa.sampling, "mixture or per-rep")->check(CLI::IsMember({"mixture", "per-rep"}));
  simulate->add_option("--threads", sa.threads, "Worker threads (0: all cores)");

  CountArgs ca;
  auto* count = app.add_subcommand("count", "Reduce time-tag files to counts tables");
  count->add_option("inputs", ca.inputs, "PTAG or CSV tag files")->required();
  count->add_option("--window-offset", ca.offset, "Window centre after sync (ps)");
  count->add_option("--halfwidth", ca.halfwidth, "Window half-width (ps)");
  count->add_option("--sync-mode", ca.sync_mode, "auto, sync or period")->check(CLI::IsMember({"auto", "sync", "period"}));
  count->add_option("--expected-reps", ca.expected_reps,
                    "Repetitions per file when no sync channel is recorded (default plan.reps_per_setting)");
  count->add_option("--setting-index", ca.setting_index, "Config setting for the input");
  count->add_option("--delay-index", ca.delay_index, "Config delay for the input");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "E, S, bootstrap errors and confidence bounds");
  analyze->add_option("input", aa.input, "Counts JSON")->required();
  analyze->add_option("--alpha", aa.alphas, "Confidence parameters");
  analyze->add_option("--bootstrap-tol", aa.bootstrap_tol, "Bootstrap convergence tolerance");
  analyze->add_flag("!--no-bootstrap", aa.bootstrap, "Skip the bootstrap");

  FitArgs fa;
  auto* fitc = app.add_subcommand("fit", "Fit g2(dt) decay or extract the dephasing rate");
  fitc->add_option("input", fa.input, "CSV: dt, value[, sigma[, s0]]")->required();
  fitc->add_option("--kind", fa.kind, "g2 or dephasing")->check(CLI::IsMember({"g2", "dephasing"}));
  fitc->add_option("--irf-fwhm", fa.irf_fwhm, "Instrument response FWHM (ps)");

  EstimateArgs ea;
  auto* estimate = app.add_subcommand("estimate", "Infer g, p_dc, eta_b0 from measured rates");
  estimate->add_option("--stokes", ea.stokes, "Stokes count rate (Hz)")->required();
  estimate->add_option("--antistokes", ea.antistokes, "Anti-Stokes rate at negative delay (Hz)")->required();
  estimate->add_option("--coinc", ea.coinc, "Coincidence rate (Hz)")->required();
  estimate->add_option("--rep-rate", ea.rep_rate, "Laser repetition rate (Hz)");
  estimate->add_option("--eta-a", ea.eta_a, "Alice-side efficiency");

  CalibrateArgs cla;
  auto* calibrate = app.add_subcommand("calibrate-vr", "Variable-retarder phase calibration");
  calibrate->add_option("input", cla.input, "CSV: voltage, normalised transmission")->required();
  calibrate->add_option("--target", cla.targets, "Phases to look up (rad)");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "Compare analytic and Fock-space pattern probabilities");
  oracle->add_option("--alpha", oa.alpha, "Alice polarizer angle (rad)");
  oracle->add_option("--beta", oa.beta, "Bob polarizer angle (rad)");
  oracle->add_option("--phi-s", oa.phi_s, "Alice retarder phase (rad)");
  oracle->add_option("--phi-a", oa.phi_a, "Bob retarder phase (rad)");
  oracle->add_option("--phi", oa.phi, "Common phase");
  oracle->add_option("--delay", oa.delay, "Delay (ps)");
  oracle->add_option("--n-max", oa.n_max, "Initial Fock truncation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*predict) return cmd_predict(g, pa);
    if (*simulate) return cmd_simulate(g, sa);
    if (*count) return cmd_count(g, ca);
    if (*analyze) return cmd_analyze(g, aa);
    if (*fitc) return cmd_fit(g, fa);
    if (*estimate) return cmd_estimate(g, ea);
    if (*calibrate) return cmd_calibrate(g, cla);
    if (*oracle) return cmd_oracle(g, oa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
