#pragma once

#include <iosfwd>

namespace stencilseer {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Entry point of the `stencilseer` tool. Returns 0 on success, 1 for usage
/// and configuration errors, 2 for runtime or assertion failures.
int run_command(int argc, const char* const* argv, std::ostream& out,
                std::ostream& err);

}  // namespace stencilseer
