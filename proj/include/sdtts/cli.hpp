#ifndef SDTTS_CLI_HPP
#define SDTTS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace sdtts {

// Entry point shared by the sdtts binary and the CLI tests. Returns the
// process exit code; all error paths print a single "error: ..." line to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace sdtts

#endif
