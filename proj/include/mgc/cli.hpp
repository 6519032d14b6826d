#pragma once

#include <iosfwd>

namespace mgc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumeric = 2;

// The mgcdemand command line: ingest | synth | build-graphs | train |
// evaluate | predict. Returns the process exit code; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mgc::cli
