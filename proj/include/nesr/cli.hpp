#pragma once

namespace nesr {

// Command-line entry point. Returns the process exit code: 0 on success,
// 1 on a usage/configuration error, 2 on a runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace nesr
