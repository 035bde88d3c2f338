#include <doctest.h>

#include "bellsim/error.hpp"
#include "bellsim/io.hpp"

using namespace bellsim;
using io::Json;

namespace {

Json base() {
  return Json::parse(R"({
    "source": {"g": 0.047, "sigma_tech": 0.31},
    "detectors": {"eta_a": 0.1, "eta_b0": 2.54e-4, "p_dc": 9e-6},
    "vibration": {"tau_phonon": 3.78, "gamma_deph": 0.0, "n_th": 1.7e-3},
    "plan": {"rep_period_ps": 12391.6, "delays_ps": [0.66],
             "settings": [{"theta": 0, "varphi": 0.7853981633974483}], "reps_per_setting": 1000, "seed": 5}
  })");
}

std::string field_of(const Json& j) {
  try {
    io::parse_config(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = io::parse_config(base());
  CHECK(c.physics.source.g == 0.047);
  CHECK(c.plan.rep_period_num == 123916);
  CHECK(c.plan.rep_period_den == 10);
  REQUIRE(c.plan.settings_list.size() == 1);
  CHECK(c.plan.settings_list[0].beta == doctest::Approx(std::numbers::pi / 8));
  CHECK(c.plan.seed == 5);
  CHECK(c.map.bob_plus == Detector::kBPerp);

  // Serialising and re-parsing is lossless.
  const auto again = io::parse_config(io::to_json(c));
  CHECK(again.plan.settings_list == c.plan.settings_list);
  CHECK(io::config_hash(io::to_json(again)) == io::config_hash(io::to_json(c)));
}

TEST_CASE("config rejects unknown keys with their path") {
  auto j = base();
  j["source"]["squeeze"] = 1;
  CHECK(field_of(j) == "source.squeeze");
  j = base();
  j["extra"] = 1;
  CHECK(field_of(j) == "extra");
  j = base();
  j["plan"]["settings"][0]["gamma"] = 0;
  CHECK(field_of(j).find("plan.settings") == 0);
  j = base();
  j["metadata"] = {{"note", "free-form"}};
  CHECK(field_of(j).empty());
}

TEST_CASE("config rejects invalid values") {
  auto j = base();
  j["detectors"]["eta_a"] = 1.5;
  CHECK(field_of(j) == "detectors.eta_a");
  j = base();
  j["plan"]["window_halfwidth_ps"] = 2000;
  CHECK(field_of(j) == "plan.window_halfwidth_ps");
  j = base();
  j["source"]["g"] = "big";
  CHECK(field_of(j) == "source.g");
  j = base();
  j["detectors"]["map"] = {{"alice_plus", "B"}};
  CHECK(!field_of(j).empty());
  j = base();
  j["plan"]["settings"][0] = {{"alpha", 0.1}, {"theta", 0.5}};
  CHECK(!field_of(j).empty());
}

TEST_CASE("counts file round trip") {
  io::CountsFile f;
  io::CountsRun r;
  r.settings = Settings::from_retarders(std::numbers::pi / 2, -std::numbers::pi / 4);
  r.delay_ps = 0.66;
  r.x = 1;
  r.y = 1;
  r.seed = 9;
  r.counts.n_pp = 3;
  r.counts.n_bothAB = 1;
  r.counts.reps = 100;
  f.runs.push_back(r);
  f.extra = Json{{"note", 1}};
  const auto back = io::counts_file_from_json(io::to_json(f));
  REQUIRE(back.runs.size() == 1);
  CHECK(back.runs[0].counts == r.counts);
  CHECK(back.runs[0].settings.alpha == doctest::Approx(r.settings.alpha));
  CHECK(*back.runs[0].x == 1);
  CHECK(back.extra == f.extra);

  auto bad = io::to_json(f);
  bad["runs"][0]["counts"]["n_pp"] = 1000;
  CHECK_THROWS_AS(io::counts_file_from_json(bad), ConfigError);
}

TEST_CASE("CHSH assignment needs all four inputs") {
  io::CountsRun r;
  r.settings = Settings::from_retarders(0, std::numbers::pi / 4);
  CHECK_THROWS_AS(io::bell_data({r}), ConfigError);
  CHECK_THROWS_AS(io::bell_data({r, r}), ConfigError);
  r.settings = Settings::from_retarders(0.3, 0.1);
  CHECK_THROWS_AS(io::bell_data({r}), ConfigError);
}

TEST_CASE("malformed JSON is a config error") {
  const auto p = std::filesystem::temp_directory_path() / "bellsim_bad.json";
  io::write_text(p, "{ not json");
  CHECK_THROWS_AS(io::load_config(p), ConfigError);
  CHECK_THROWS_AS(io::load_config("/nonexistent/bellsim.json"), IoError);
}
