#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace patchdiff::cli {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  /// Bad flags, config file, or input geometry.
  kExitConfig = 2,
  /// Missing, unreadable, or undecodable files.
  kExitIo = 3,
  /// Non-finite values during training or sampling.
  kExitNumeric = 4,
  /// A batch command finished but some files failed.
  kExitPartial = 5,
};

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

}  // namespace patchdiff::cli
