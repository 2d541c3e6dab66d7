#ifndef SALICON_TOOLS_CLI_HPP_
#define SALICON_TOOLS_CLI_HPP_

#include <ostream>

namespace salicon::cli {

// Exit codes of the `salicon` tool.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;  // gradcheck outside tolerance
inline constexpr int kInputError = 2;
inline constexpr int kDiverged = 3;
inline constexpr int kUsage = 4;

// Parses argv (argv[0] is the program name) and runs one subcommand. Reports
// go to `out`; the resolved configuration and diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace salicon::cli

#endif  // SALICON_TOOLS_CLI_HPP_
