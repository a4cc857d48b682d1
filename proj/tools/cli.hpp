#pragma once

#include <iosfwd>

namespace roleplay {

/// Exit codes of the command line tool.
enum ExitCode { exit_ok = 0, exit_config = 1, exit_backend = 2 };

/// Runs `rpchat` with explicit streams so tests can drive it in-process.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out,
            std::ostream& err);

}  // namespace roleplay
