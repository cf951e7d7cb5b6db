#pragma once

#include <string>

#include "msp/config.hpp"

namespace msp {

// Fast oracle and gradient suite behind the `selfcheck` command. Prints one
// [ok]/[FAIL] line per check. Returns 0 when everything passed. out_dir may
// be empty; the checkpoint round trip then uses a temporary directory.
int run_selfcheck(const RunConfig& cfg, const std::string& out_dir);

}  // namespace msp
