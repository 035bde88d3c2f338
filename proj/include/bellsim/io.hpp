#pragma once

// JSON configuration, counts files and run manifests.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bellsim/core.hpp"
#include "bellsim/stats.hpp"

namespace bellsim::io {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "bellsim";
inline constexpr const char* kToolVersion = "1.0.0";

struct Config {
  PhysicsParams physics;
  ExperimentPlan plan;
  DetectorMap map;
  Json metadata = Json::object();
};

/// Parses and validates a configuration. Unknown keys raise ConfigError
/// naming the dotted path.
Config parse_config(const Json& j);
Config load_config(const std::filesystem::path& path);
Json to_json(const Config& c);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

Json to_json(const Settings& s);
Settings settings_from_json(const Json& j, const std::string& where);
Json to_json(const CountsTable& c);
CountsTable counts_from_json(const Json& j, const std::string& where);

struct CountsRun {
  Settings settings;
  double delay_ps = 0.0;
  std::optional<int> x, y;  // input bits when the run belongs to a CHSH set
  std::uint64_t seed = 0;
  CountsTable counts;
};

struct CountsFile {
  std::vector<CountsRun> runs;
  Json extra = Json::object();  // diagnostics carried alongside the runs
};

Json to_json(const CountsFile& f);
CountsFile counts_file_from_json(const Json& j);
CountsFile read_counts(const std::filesystem::path& path);

/// Assigns runs at one delay to CHSH inputs, using explicit x/y bits or
/// matching theta/varphi against the default input map.
stats::BellRunData bell_data(const std::vector<CountsRun>& runs);

/// Distinct delays present in a counts file, ascending.
std::vector<double> delays_in(const CountsFile& f);

/// FNV-1a hash of the canonical JSON dump, hex encoded.
std::string config_hash(const Json& j);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
};

Json to_json(const RunManifest& m);
std::string utc_timestamp();

}  // namespace bellsim::io
