#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace moe_depth {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `moe_depth` tool. `args` excludes the program name.
/// Verbs: gen, train, ablate, eval, render.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moe_depth
