// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace occlm::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `occlm` command line. `args[0]` is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

/// Writes the bundled demo corpus, desk configs and comparison script.
/// Throws IoError when files exist and `force` is false.
void quickstart(const std::filesystem::path& out_dir, bool force, std::ostream& out);

}  // namespace occlm::cli
