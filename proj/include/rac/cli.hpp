#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rac::app {

/// Runs the `rac` command line. `args` excludes the program name. Results go to
/// `out`; failures are written to `err` as a JSON object {"error": {...}}.
/// Exit codes: 0 success, 2 usage error, 1 any other failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rac::app
