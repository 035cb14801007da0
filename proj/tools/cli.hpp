#pragma once

// The `transfer` command line: gen-data, train, eval, sweep and visualize.

#include <iosfwd>
#include <string>
#include <vector>

namespace transfer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One swept axis: `key=lo:hi:step`, `key=a,b,c` or `key=value`.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};
GridAxis parse_grid_axis(const std::string& spec);

}  // namespace transfer::cli
