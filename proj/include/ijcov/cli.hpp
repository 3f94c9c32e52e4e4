#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ijcov {

/// Runs the command line `args` (without the program name). Returns 0 on
/// success, 1 on usage or input errors, 2 on numerical failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_dispatch(int argc, char** argv);

}  // namespace ijcov
