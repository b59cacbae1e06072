// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_TOOLS_CLI_HPP
#define DAGGER_TOOLS_CLI_HPP

#include <iosfwd>

namespace dagger {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitBudget = 4,
};

/// Entry point of the dagger_prune tool. Subcommands: train, prune, eval,
/// flops, report. Progress goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dagger

#endif  // DAGGER_TOOLS_CLI_HPP
