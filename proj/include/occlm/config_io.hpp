// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "occlm/model.hpp"
#include "occlm/train.hpp"

namespace occlm {

/// Model + training configuration with the selected objective. The JSON form
/// is {"objective": ..., "model": {...}, "train": {...}}; partial objects
/// override only the keys they contain.
struct RunConfig {
  std::string objective = "standard";  // "standard" | "occlusion"
  ModelConfig model;
  TrainConfig train;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json run_config_to_json(const RunConfig& config);
void merge_run_config(RunConfig& config, const nlohmann::json& j);

/// Names accepted by preset(), without the "preset:" prefix.
std::vector<std::string> preset_names();
/// Accepts "table3-occ" or "preset:table3-occ". Unknown names are a ConfigError.
RunConfig preset(std::string_view name);

/// Occlusion probability used when the objective is "occlusion" and no
/// explicit probability was configured.
inline constexpr double kDefaultOcclusionProb = 0.3;

}  // namespace occlm
