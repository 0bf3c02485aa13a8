#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace masred {

inline constexpr const char* kOutputDirEnv = "MASRED_OUTPUT_DIR";
inline constexpr const char* kRunManifestName = "run-manifest.json";

// Runs one command line. Exit codes: 0 success, 1 domain error (one
// "error[<kind>]: <message>" line on `err`), 2 usage error (usage on `err`).
// `in` and `out` carry the oracle protocol for `oracle serve-toy`.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace masred
