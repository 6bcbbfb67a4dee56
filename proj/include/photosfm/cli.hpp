#pragma once

#include <string>
#include <vector>

namespace photosfm {

// Full command-line front end as a library call so tests can invoke it
// in-process. args excludes the program name. Returns the process exit code:
// 0 success, 1 runtime/validation failure, 2 usage error.
int run_cli(const std::vector<std::string>& args);

}  // namespace photosfm
