#pragma once

// Declarative experiment runner behind the `cvqwc run` command.
//
// A config is a JSON object with keys experiment, output_path, parameters and
// optionally seed, threads, timing and schema_version (see
// schema/experiment.schema.json). Unknown keys are rejected. A run writes
// <output>/results.csv and <output>/manifest.json.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cvqwc {

inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

/// Malformed or out-of-range configuration. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct ExperimentConfig {
  std::string experiment;
  std::string output_path;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool timing = false;  // adds a wall_time column (breaks byte-identical CSVs)
  nlohmann::json parameters;
  std::string text;  // raw document, for hashing and line lookup
};

ExperimentConfig parse_config(const std::string& text);

struct ResultTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<double> wall_times;    // seconds per row
  std::vector<nlohmann::json> meta;  // per-row cutoffs and similar
};

/// Runs every sweep point; rows keep sweep order whatever the thread count.
ResultTable run_experiment(const ExperimentConfig& cfg);

std::string to_csv(const ResultTable& table, bool with_wall_time);

std::string sha256_hex(std::string_view data);

struct RunOverrides {
  std::optional<std::string> output_dir;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

/// Exit codes: 0 ok, 1 numerical guard, 2 config error (nothing written).
int run_command(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                std::ostream& err);

}  // namespace cvqwc
