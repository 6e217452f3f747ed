#pragma once

namespace mmpid::cli {

// Runs one subcommand. Returns the process exit code: 0 on success, 1 when a
// command fails, 2 on a usage error.
int dispatch(int argc, const char* const* argv);

}  // namespace mmpid::cli
