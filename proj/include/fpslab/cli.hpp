#pragma once

#include <iosfwd>

namespace fpslab {

// Entry point of the fpslab tool:
//   fpslab run|sweep|bounds|diagnose <config.json> [--out DIR] [--replicas N]
//          [--seeds s1,s2,...] [--threads N]
// Returns 0 on success, 2 on usage or schema errors (the message names the
// offending field) and 1 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fpslab
