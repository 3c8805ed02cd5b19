#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prognos::cli {

/// Runs one command line (args exclude the program name). Returns 0 on
/// success, 1 on a usage error, 2 on a runtime error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prognos::cli
