#ifndef XPROMPT_TOOLS_CLI_HPP
#define XPROMPT_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace xprompt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xprompt::cli

#endif  // XPROMPT_TOOLS_CLI_HPP
