#pragma once

#include <iosfwd>

namespace slab {

// Parses `slab <command> [--config FILE] [--key value ...]` and runs the
// command. Returns the process exit status: 0 success, 2 usage or validation
// error, 3 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace slab
