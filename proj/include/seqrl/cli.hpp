#pragma once

#include <string>
#include <vector>

namespace seqrl {

// argv-style entry point, program name excluded. Returns the process exit
// code: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace seqrl
