// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cocite {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitRuntime = 4,
};

/// Environment variable naming the default data directory.
inline constexpr const char* kDataDirEnv = "COCITE_DATA_DIR";

/// Entry point of the `cocite` tool. Commands: generate-corpus,
/// build-dataset, extend, train, evaluate, embed.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cocite
