#pragma once

namespace geostyle {

// Entry point shared by the command-line binary and in-process tests.
// Returns a process exit code; never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace geostyle
