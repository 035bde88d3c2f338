#include "bellsim/io.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "bellsim/error.hpp"

namespace bellsim::io {

namespace {

void reject_unknown(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "config" : where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where.empty() ? key : where + "." + key, "unknown key");
  }
}

std::string path_of(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

double number(const Json& j, const std::string& where, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(path_of(where, key), "expected a number");
  return v.get<double>();
}

std::uint64_t unsigned_number(const Json& j, const std::string& where, const char* key,
                              std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float() && v.get<double>() >= 0 && v.get<double>() == std::floor(v.get<double>()) &&
      v.get<double>() < 1.8e19) {
    return static_cast<std::uint64_t>(v.get<double>());
  }
  throw ConfigError(path_of(where, key), "expected a non-negative integer");
}

Detector detector_from_name(const Json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where, "expected a detector name");
  const auto s = v.get<std::string>();
  if (s == "A") return Detector::kA;
  if (s == "A_perp") return Detector::kAPerp;
  if (s == "B") return Detector::kB;
  if (s == "B_perp") return Detector::kBPerp;
  throw ConfigError(where, "unknown detector '" + s + "' (A, A_perp, B, B_perp)");
}

const char* detector_name(Detector d) {
  switch (d) {
    case Detector::kA: return "A";
    case Detector::kAPerp: return "A_perp";
    case Detector::kB: return "B";
    case Detector::kBPerp: return "B_perp";
  }
  return "?";
}

}  // namespace

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

Json to_json(const Settings& s) {
  return Json{{"alpha", s.alpha}, {"phi_s", s.phi_s}, {"beta", s.beta}, {"phi_a", s.phi_a},
              {"theta", s.theta()}, {"varphi", s.varphi()}};
}

Settings settings_from_json(const Json& j, const std::string& where) {
  reject_unknown(j, where, {"alpha", "phi_s", "beta", "phi_a", "theta", "varphi"});
  const bool rot = j.contains("alpha") || j.contains("beta");
  const bool ret = j.contains("theta") || j.contains("varphi");
  Settings s;
  s.phi_s = number(j, where, "phi_s", 0.0);
  s.phi_a = number(j, where, "phi_a", 0.0);
  if (rot && ret) {
    // Written by to_json: both forms present, they must agree.
    s.alpha = number(j, where, "alpha", 0.0);
    s.beta = number(j, where, "beta", 0.0);
    if (std::abs(s.theta() - number(j, where, "theta", s.theta())) > 1e-12 ||
        std::abs(s.varphi() - number(j, where, "varphi", s.varphi())) > 1e-12) {
      throw ConfigError(where, "theta/varphi disagree with alpha/beta");
    }
  } else if (ret) {
    s.alpha = number(j, where, "theta", 0.0) / 2.0;
    s.beta = number(j, where, "varphi", 0.0) / 2.0;
  } else {
    s.alpha = number(j, where, "alpha", 0.0);
    s.beta = number(j, where, "beta", 0.0);
  }
  return s;
}

Config parse_config(const Json& j) {
  reject_unknown(j, "", {"source", "detectors", "vibration", "plan", "metadata"});
  Config c;
  if (j.contains("source")) {
    const Json& s = j.at("source");
    reject_unknown(s, "source", {"g", "sigma_tech"});
    c.physics.source.g = number(s, "source", "g", 0.0);
    c.physics.source.sigma_tech = number(s, "source", "sigma_tech", 0.0);
  }
  if (j.contains("detectors")) {
    const Json& d = j.at("detectors");
    reject_unknown(d, "detectors", {"eta_a", "eta_b0", "p_dc", "map"});
    c.physics.detectors.eta_a = number(d, "detectors", "eta_a", 0.0);
    c.physics.detectors.eta_b0 = number(d, "detectors", "eta_b0", 0.0);
    c.physics.detectors.p_dc = number(d, "detectors", "p_dc", 0.0);
    if (d.contains("map")) {
      const Json& m = d.at("map");
      reject_unknown(m, "detectors.map", {"alice_plus", "alice_minus", "bob_plus", "bob_minus"});
      if (m.contains("alice_plus")) c.map.alice_plus = detector_from_name(m.at("alice_plus"), "detectors.map.alice_plus");
      if (m.contains("alice_minus")) c.map.alice_minus = detector_from_name(m.at("alice_minus"), "detectors.map.alice_minus");
      if (m.contains("bob_plus")) c.map.bob_plus = detector_from_name(m.at("bob_plus"), "detectors.map.bob_plus");
      if (m.contains("bob_minus")) c.map.bob_minus = detector_from_name(m.at("bob_minus"), "detectors.map.bob_minus");
      if (!c.map.valid()) throw ConfigError("detectors.map", "must assign A/A_perp to Alice and B/B_perp to Bob");
    }
  }
  if (j.contains("vibration")) {
    const Json& v = j.at("vibration");
    reject_unknown(v, "vibration", {"tau_phonon", "gamma_deph", "n_th"});
    c.physics.vibration.tau_phonon = number(v, "vibration", "tau_phonon", 3.78);
    c.physics.vibration.gamma_deph = number(v, "vibration", "gamma_deph", 0.0);
    c.physics.vibration.n_th = number(v, "vibration", "n_th", 1.7e-3);
  }
  if (j.contains("plan")) {
    const Json& p = j.at("plan");
    reject_unknown(p, "plan", {"rep_period_ps", "bin_separation_ps", "window_halfwidth_ps", "delays_ps",
                               "settings", "reps_per_setting", "seed"});
    if (p.contains("rep_period_ps")) {
      const double period = number(p, "plan", "rep_period_ps", 0.0);
      if (!(period > 0.0) || period > 1e15) throw ConfigError("plan.rep_period_ps", "must be > 0");
      c.plan.rep_period_num = static_cast<std::uint64_t>(std::llround(period * 10.0));
      c.plan.rep_period_den = 10;
    }
    c.plan.bin_separation_ps = static_cast<std::int64_t>(
        unsigned_number(p, "plan", "bin_separation_ps", static_cast<std::uint64_t>(c.plan.bin_separation_ps)));
    c.plan.window_halfwidth_ps = static_cast<std::int64_t>(
        unsigned_number(p, "plan", "window_halfwidth_ps", static_cast<std::uint64_t>(c.plan.window_halfwidth_ps)));
    if (p.contains("delays_ps")) {
      if (!p.at("delays_ps").is_array()) throw ConfigError("plan.delays_ps", "expected an array");
      for (const auto& d : p.at("delays_ps")) {
        if (!d.is_number()) throw ConfigError("plan.delays_ps", "expected numbers");
        c.plan.delays_ps.push_back(d.get<double>());
      }
    }
    if (p.contains("settings")) {
      if (!p.at("settings").is_array()) throw ConfigError("plan.settings", "expected an array");
      std::size_t i = 0;
      for (const auto& s : p.at("settings")) {
        c.plan.settings_list.push_back(settings_from_json(s, "plan.settings[" + std::to_string(i++) + "]"));
      }
    }
    c.plan.reps_per_setting = unsigned_number(p, "plan", "reps_per_setting", 0);
    c.plan.seed = unsigned_number(p, "plan", "seed", 0);
  }
  if (j.contains("metadata")) {
    if (!j.at("metadata").is_object()) throw ConfigError("metadata", "expected an object");
    c.metadata = j.at("metadata");
  }
  validate(c.physics);
  validate(c.plan);
  return c;
}

Config load_config(const std::filesystem::path& path) { return parse_config(read_json(path)); }

Json to_json(const Config& c) {
  Json settings = Json::array();
  for (const auto& s : c.plan.settings_list) {
    settings.push_back(Json{{"alpha", s.alpha}, {"phi_s", s.phi_s}, {"beta", s.beta}, {"phi_a", s.phi_a}});
  }
  Json j{
      {"source", {{"g", c.physics.source.g}, {"sigma_tech", c.physics.source.sigma_tech}}},
      {"detectors",
       {{"eta_a", c.physics.detectors.eta_a},
        {"eta_b0", c.physics.detectors.eta_b0},
        {"p_dc", c.physics.detectors.p_dc},
        {"map",
         {{"alice_plus", detector_name(c.map.alice_plus)},
          {"alice_minus", detector_name(c.map.alice_minus)},
          {"bob_plus", detector_name(c.map.bob_plus)},
          {"bob_minus", detector_name(c.map.bob_minus)}}}}},
      {"vibration",
       {{"tau_phonon", c.physics.vibration.tau_phonon},
        {"gamma_deph", c.physics.vibration.gamma_deph},
        {"n_th", c.physics.vibration.n_th}}},
      {"plan",
       {{"rep_period_ps", c.plan.rep_period_ps()},
        {"bin_separation_ps", c.plan.bin_separation_ps},
        {"window_halfwidth_ps", c.plan.window_halfwidth_ps},
        {"delays_ps", c.plan.delays_ps},
        {"settings", settings},
        {"reps_per_setting", c.plan.reps_per_setting},
        {"seed", c.plan.seed}}}};
  if (!c.metadata.empty()) j["metadata"] = c.metadata;
  return j;
}

Json to_json(const CountsTable& c) {
  return Json{{"n_pp", c.n_pp},           {"n_pm", c.n_pm},           {"n_mp", c.n_mp},
              {"n_mm", c.n_mm},           {"n_bothA_p", c.n_bothA_p}, {"n_bothA_m", c.n_bothA_m},
              {"n_bothB_p", c.n_bothB_p}, {"n_bothB_m", c.n_bothB_m}, {"n_bothAB", c.n_bothAB},
              {"singles_Ap", c.singles_Ap}, {"singles_Am", c.singles_Am},
              {"singles_Bp", c.singles_Bp}, {"singles_Bm", c.singles_Bm}, {"reps", c.reps}};
}

CountsTable counts_from_json(const Json& j, const std::string& where) {
  reject_unknown(j, where, {"n_pp", "n_pm", "n_mp", "n_mm", "n_bothA_p", "n_bothA_m", "n_bothB_p",
                            "n_bothB_m", "n_bothAB", "singles_Ap", "singles_Am", "singles_Bp",
                            "singles_Bm", "reps"});
  CountsTable c;
  c.n_pp = unsigned_number(j, where, "n_pp", 0);
  c.n_pm = unsigned_number(j, where, "n_pm", 0);
  c.n_mp = unsigned_number(j, where, "n_mp", 0);
  c.n_mm = unsigned_number(j, where, "n_mm", 0);
  c.n_bothA_p = unsigned_number(j, where, "n_bothA_p", 0);
  c.n_bothA_m = unsigned_number(j, where, "n_bothA_m", 0);
  c.n_bothB_p = unsigned_number(j, where, "n_bothB_p", 0);
  c.n_bothB_m = unsigned_number(j, where, "n_bothB_m", 0);
  c.n_bothAB = unsigned_number(j, where, "n_bothAB", 0);
  c.singles_Ap = unsigned_number(j, where, "singles_Ap", 0);
  c.singles_Am = unsigned_number(j, where, "singles_Am", 0);
  c.singles_Bp = unsigned_number(j, where, "singles_Bp", 0);
  c.singles_Bm = unsigned_number(j, where, "singles_Bm", 0);
  c.reps = unsigned_number(j, where, "reps", 0);
  if (c.reps > 0 && c.post_selected() > c.reps) {
    throw ConfigError(where, "coincidences exceed the repetition count");
  }
  return c;
}

Json to_json(const CountsFile& f) {
  Json runs = Json::array();
  for (const auto& r : f.runs) {
    Json run{{"setting", to_json(r.settings)}, {"delay_ps", r.delay_ps}};
    if (r.x) run["x"] = *r.x;
    if (r.y) run["y"] = *r.y;
    run["seed"] = r.seed;
    run["counts"] = to_json(r.counts);
    runs.push_back(run);
  }
  Json j{{"format", "bellsim-counts"}, {"version", 1}, {"runs", runs}};
  if (!f.extra.empty()) j["diagnostics"] = f.extra;
  return j;
}

CountsFile counts_file_from_json(const Json& j) {
  reject_unknown(j, "", {"format", "version", "runs", "diagnostics", "manifest", "metadata"});
  if (!j.contains("runs") || !j.at("runs").is_array()) throw ConfigError("runs", "expected an array");
  CountsFile f;
  std::size_t i = 0;
  for (const auto& r : j.at("runs")) {
    const std::string where = "runs[" + std::to_string(i++) + "]";
    reject_unknown(r, where, {"setting", "delay_ps", "x", "y", "seed", "counts", "label"});
    CountsRun run;
    if (r.contains("setting")) run.settings = settings_from_json(r.at("setting"), where + ".setting");
    run.delay_ps = number(r, where, "delay_ps", 0.0);
    if (r.contains("x")) run.x = static_cast<int>(unsigned_number(r, where, "x", 0));
    if (r.contains("y")) run.y = static_cast<int>(unsigned_number(r, where, "y", 0));
    if ((run.x && *run.x > 1) || (run.y && *run.y > 1)) throw ConfigError(where, "x and y must be bits");
    run.seed = unsigned_number(r, where, "seed", 0);
    if (!r.contains("counts")) throw ConfigError(where + ".counts", "missing");
    run.counts = counts_from_json(r.at("counts"), where + ".counts");
    f.runs.push_back(run);
  }
  if (j.contains("diagnostics")) f.extra = j.at("diagnostics");
  return f;
}

CountsFile read_counts(const std::filesystem::path& path) {
  return counts_file_from_json(read_json(path));
}

stats::BellRunData bell_data(const std::vector<CountsRun>& runs) {
  stats::BellRunData data;
  std::array<bool, 4> seen{};
  auto match = [](double v, const std::array<double, 2>& opts) -> int {
    for (int k = 0; k < 2; ++k) {
      if (std::abs(v - opts[k]) < 1e-9) return k;
    }
    return -1;
  };
  for (const auto& r : runs) {
    int x = r.x ? *r.x : match(r.settings.theta(), data.theta);
    int y = r.y ? *r.y : match(r.settings.varphi(), data.varphi);
    if (x < 0 || y < 0) throw ConfigError("runs", "setting does not match a CHSH input");
    if (seen[2 * x + y]) throw ConfigError("runs", "duplicate CHSH input (x, y)");
    seen[2 * x + y] = true;
    data.at(x, y) = r.counts;
  }
  for (bool s : seen) {
    if (!s) throw ConfigError("runs", "all four CHSH settings are required");
  }
  return data;
}

std::vector<double> delays_in(const CountsFile& f) {
  std::set<double> d;
  for (const auto& r : f.runs) d.insert(r.delay_ps);
  return {d.begin(), d.end()};
}

std::string config_hash(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

Json to_json(const RunManifest& m) {
  return Json{{"tool", kToolName},
              {"version", kToolVersion},
              {"command", m.command},
              {"config_hash", m.config_hash},
              {"seed", m.seed},
              {"inputs", m.inputs},
              {"outputs", m.outputs},
              {"timestamps", {{"started", m.started}, {"finished", m.finished}}}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace bellsim::io
