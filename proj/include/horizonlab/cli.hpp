#pragma once

#include <iosfwd>
#include <string>
#include <string_view>

#include "json.hpp"

namespace horizonlab::cli {

inline constexpr std::string_view kToolName = "horizonlab";
inline constexpr std::string_view kVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_divergence = 3, exit_ingestion = 4 };

/// Entry point of the `horizonlab` executable.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Fills every default for a config-driven subcommand (train, sweep,
/// curriculum, probe, schedule, lyapunov). Accepts a manifest in place of a
/// config. Throws ArgumentError listing all unknown keys.
nlohmann::json resolve_config(std::string_view command, const nlohmann::json& raw);

}  // namespace horizonlab::cli
