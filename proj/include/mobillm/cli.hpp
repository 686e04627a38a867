#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mobillm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

// Entry point behind the mobillm binary. args excludes the program name.
// Returns 0 on success, 1 on a usage or configuration error, 2 on a runtime
// failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "uniform:M" or a comma-separated list of ascending cut points ending at
// `layers`.
std::vector<std::uint32_t> parse_cuts(const std::string& text, std::uint32_t layers);

// Options of every subcommand that lack a displayed default; empty when the
// help text is complete.
std::vector<std::string> options_without_defaults();

}  // namespace mobillm
