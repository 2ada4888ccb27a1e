#pragma once

// The `handstate` command: generate, train, crossval, replay and plot.
//
// Every flag can also come from a JSON file given with --config, either as
// {"<subcommand>": {"<flag>": value, ...}} or as a run manifest, whose
// "config" member has that shape. Flags on the command line win.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace handstate::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitTraining = 3 };

/// Environment variable naming the default dataset directory.
inline constexpr const char* kDataEnv = "HANDSTATE_DATA";
inline constexpr const char* kRunManifestName = "run_manifest.json";

std::string toolkit_version();

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> command_line;
  /// Resolved flags as {"<command>": {...}}; valid input for --config.
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::map<std::string, std::uint64_t> seeds;
  /// Paths relative to the manifest's directory.
  std::vector<std::string> artifacts;
  std::optional<nlohmann::ordered_json> metrics;
  std::string version = toolkit_version();

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

void write_run_manifest(const RunManifest& m, const std::filesystem::path& dir);
RunManifest read_run_manifest(const std::filesystem::path& dir);

/// Runs one command line (without the program name). Never throws; errors
/// are reported on `err` and mapped onto the exit codes above.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace handstate::cli
