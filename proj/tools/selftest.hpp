#pragma once

namespace ctfusion::selftest {

// Runs the bundled invariant checks, printing one line each.
// Returns 0 when everything passes.
int run(bool color);

}  // namespace ctfusion::selftest
