#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pwrd::cli {

// Runs one invocation; args excludes the program name. Returns the process
// exit code: 0 ok, 2 validation, 3 degenerate estimation, 4 numerical.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pwrd::cli
