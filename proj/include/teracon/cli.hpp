#pragma once

namespace teracon {

// Subcommands: generate | train | evaluate | report.
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.
int cli_main(int argc, const char* const* argv);

}  // namespace teracon
