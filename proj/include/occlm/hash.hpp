// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace occlm {

/// 64-bit FNV-1a. Used for provenance fingerprints, not security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Lower-case 16-digit hex rendering of `fnv1a64(bytes)`.
std::string hash_hex(std::string_view bytes);

/// Hash of a whole file's bytes. Throws IoError if unreadable.
std::string file_hash_hex(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace occlm
