// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bdmae {

/// Process exit codes used by the command-line tool.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUnreadableInput = 2;
inline constexpr int kOracleFailure = 3;
inline constexpr int kUsage = 64;
inline constexpr int kDataError = 65;
inline constexpr int kCannotCreate = 73;
}  // namespace exit_code

/// Runs `bdmae <command> [flags]`. `args` excludes the program name.
/// Commands: defend, eval, gen-corpus. Results go to `out`, diagnostics to
/// `err`; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bdmae
