#pragma once

#include <iosfwd>

namespace doconv::cli {

// Entry point behind the `doconv` binary. Subcommands: train, eval, fold,
// macc, delta, check. Returns 0 on success, 2 on usage/config errors, 3 on
// runtime or numeric errors; errors also emit one machine-readable JSON line
// on `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace doconv::cli
