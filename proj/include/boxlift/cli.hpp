#pragma once

namespace boxlift {

/// Command-line entry point (subcommands: synth, fit, eval, loss-debug,
/// plot-data). Returns 0 on success, 1 when some objects were skipped or
/// failed, 2 on usage or fatal errors.
int cli_main(int argc, const char* const* argv);

}  // namespace boxlift
