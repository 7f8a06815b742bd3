#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace secrms {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Resolves a config name: an existing path is used as is, otherwise each directory of the
/// colon-separated SECRMS_CONFIG_PATH is tried in order. Throws DataError if nothing matches.
std::filesystem::path find_config(const std::string& name);

/// Entry point of the secrms tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace secrms
