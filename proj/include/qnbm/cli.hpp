#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "qnbm/error.hpp"

namespace qnbm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind) noexcept;

/// Runs one subcommand (synth, train, backtest, evaluate, explain). `args`
/// excludes the program name. Errors are reported on `err` as one JSON line
/// and mapped to the documented exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

const char* version() noexcept;

}  // namespace qnbm::cli
