// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "occlm/model.hpp"

namespace occlm {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Binary layout: 8-byte magic "OCCLMCK1", u32 format version, u64 header
/// length, JSON header, then each tensor listed in the header as row-major
/// little-endian float32 in header order.
struct Checkpoint {
  GptModel model;
  std::string vocab_hash;
  std::string run_id;
  /// Free-form training metadata (epoch, losses, objective, ...).
  nlohmann::json metadata = nlohmann::json::object();
  /// Optional extra tensors (optimizer moments) stored after the parameters.
  std::vector<NamedTensor> extra_tensors;
  /// Optional resumable-state blob; null when absent.
  nlohmann::json state;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Overrides fields of `config` present in `j`; unknown keys are a ConfigError.
void merge_model_config(ModelConfig& config, const nlohmann::json& j);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError when `ckpt` was built for a different config or vocab.
void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected_config,
                        std::string_view expected_vocab_hash);

}  // namespace occlm
