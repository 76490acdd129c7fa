#pragma once

#include <iosfwd>

namespace clinembed::cli {

/// Runs the `clinembed` command line. Returns the process exit code:
/// 0 success, 1 runtime or numeric failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clinembed::cli
