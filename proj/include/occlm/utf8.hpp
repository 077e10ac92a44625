// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace occlm::utf8 {

/// Byte offset of the first malformed sequence, or nullopt when valid.
std::optional<std::size_t> first_invalid(std::string_view text);

/// Throws EncodingError naming `context` when `text` is not valid UTF-8.
void require_valid(std::string_view text, std::string_view context = "input");

std::vector<char32_t> decode(std::string_view text);
void append(std::string& out, char32_t cp);
std::string encode(const std::vector<char32_t>& cps);

/// Unicode simple lowercase mapping (via the C.UTF-8 locale tables).
char32_t to_lower(char32_t cp);

bool is_letter(char32_t cp);
bool is_digit(char32_t cp);
bool is_space(char32_t cp);

}  // namespace occlm::utf8
