// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace occlm {

/// Two registers over one synthetic lexicon: everyday narrative sentences
/// and news-report sentences. Both draw content words from the same
/// pseudo-word inventory, so a model trained on one transfers to the other.
enum class DemoStyle { kGeneral, kNews };

/// Raw (uncleaned) lines: capitalized, punctuated, with occasional stray
/// symbols and several sentences per line. Deterministic in (style, seed).
std::vector<std::string> demo_corpus(DemoStyle style, std::size_t n_lines, std::uint64_t seed);

}  // namespace occlm
