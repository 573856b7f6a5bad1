#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prunelab/experiment.hpp"

namespace prunelab {

// Exit codes: 0 success, 1 run failure, 2 usage error.
enum : int { kExitOk = 0, kExitRunFailure = 1, kExitUsage = 2 };

struct Command {
  enum class Kind { train, prune, sweep, report } kind = Kind::sweep;
  std::string config_path;    // train / prune / sweep
  std::string method;         // prune
  double sparsity = 0.0;      // prune
  std::string results_path;   // report
  std::string report_out;     // report
  // global flags
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> workers;
  bool quiet = false;
};

// Parses argv into a Command or throws CLI11's usage errors; exposed
// separately from main so the mapping is unit-testable.
Command parse_args(const std::vector<std::string>& args);

int run_command(const Command& command);

// Full entry point: parse, dispatch, map errors to exit codes and messages.
int cli_main(int argc, const char* const* argv);

}  // namespace prunelab
