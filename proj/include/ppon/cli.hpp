#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ppon::cli {

enum ExitCode { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

/// Environment variable holding the BLAS worker-thread count.
inline constexpr const char* kThreadsEnv = "PPON_NUM_THREADS";

/// Replaces `--config FILE` with the file's `key=value` lines rendered as
/// `--key=value` flags, placed before the remaining flags so the command line
/// wins. Throws ConfigError on unreadable files or malformed lines.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

} // namespace ppon::cli
