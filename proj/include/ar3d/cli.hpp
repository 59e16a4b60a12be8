#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ar3d {

/// Exit codes: 0 success, 1 usage error, 2 runtime failure. `args` includes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ar3d
