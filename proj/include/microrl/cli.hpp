#pragma once

namespace microrl {

// Command-line entry point (gen-data / train / eval / plot / report).
// Returns a process exit code; never throws.
int cli_main(int argc, const char* const* argv);

}  // namespace microrl
