#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace splinemix::cli {

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_parse = 3, exit_numerical = 4 };

/// Entry point behind the splinemix executable. args excludes the program
/// name; args[0] selects fit, select or simulate. Terminal output goes to
/// out and err; artifacts go to the --out directory. On failure an
/// error.json record is written there when the directory is usable.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace splinemix::cli
