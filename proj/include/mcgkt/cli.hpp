#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mcgkt {

// Full command-line surface: synth | train | derain | eval | ablate |
// gradcheck | import-weights. Returns the process exit code (0 ok, 1 usage,
// 2 I/O, 3 numeric failure) and writes a single-line `error: ...` diagnostic
// to `err` on failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Option names per subcommand, for the documentation snapshot test.
std::map<std::string, std::vector<std::string>> cli_flag_table();

}  // namespace mcgkt
