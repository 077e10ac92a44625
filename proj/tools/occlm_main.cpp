// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "occlm/cli.hpp"

int main(int argc, char** argv) {
  return occlm::cli::dispatch(std::vector<std::string>(argv, argv + argc));
}
