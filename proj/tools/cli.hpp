#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tpusim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `tpusim` command. Data goes to `out` (or --out files), diagnostics to `err`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

} // namespace tpusim::cli
