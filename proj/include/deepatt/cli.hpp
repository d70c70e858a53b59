#pragma once

#include <iosfwd>

namespace deepatt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Entry point of the `deepatt` tool: train | tag | eval | gradcheck | bench | synth.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deepatt
