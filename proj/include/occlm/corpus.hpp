// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "occlm/bpe.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

struct CleaningConfig {
  bool strip_slashes = true;
  bool strip_special_chars = true;
  /// Non-alphanumeric, non-space characters that survive special-char removal.
  std::string allowed_symbols = ".,'-";
  bool collapse_repeated_fullstops = true;
  bool sentence_split_on_fullstop = true;
  bool lowercase = true;

  bool any_enabled() const;
};

/// Applies, in order: slash removal, special-character removal, full-stop
/// collapsing, sentence splitting, lowercasing. Whitespace is collapsed and
/// trimmed; empty lines are dropped. Idempotent.
std::vector<std::string> clean(std::span<const std::string> lines, const CleaningConfig& cfg = {});

struct SplitSpec {
  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitResult {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

/// Seeded shuffle followed by a contiguous train/valid/test partition.
SplitResult split(std::span<const std::string> lines, const SplitSpec& spec);

struct SplitStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t unique_tokens = 0;
  bool operator==(const SplitStats&) const = default;
};

/// Table-2-style accounting. `total` sums sentences and tokens across
/// splits; its unique count is over the union of all splits' tokens.
struct CorpusStats {
  std::vector<std::string> split_names;
  std::vector<SplitStats> splits;
  SplitStats total;

  nlohmann::json to_json() const;
  std::string table() const;
};

using TokenizeFn = std::function<std::vector<std::string>(std::string_view)>;

TokenizeFn whitespace_tokenizer();
TokenizeFn bpe_tokenizer(const Vocabulary& vocab);

struct NamedSplit {
  std::string name;
  std::span<const std::string> lines;
};

CorpusStats stats(std::span<const NamedSplit> splits, const TokenizeFn& tokenize);
CorpusStats stats(std::span<const NamedSplit> splits, const Vocabulary& vocab);

/// One training batch: inputs [B, T], next-token targets and a loss mask.
struct Batch {
  TokenGrid inputs;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> ignore;

  std::size_t target_count() const;
};

/// Packed token stream cut into (block_size + 1)-id windows. Window k holds
/// stream ids [k(B+1), (k+1)(B+1)); the last window may be short and is
/// right-padded with pad ids that are masked out of the loss.
class TokenDataset {
 public:
  TokenDataset() = default;
  TokenDataset(std::size_t block_size, TokenId pad_id);

  std::size_t block_size() const { return block_size_; }
  TokenId pad_id() const { return pad_id_; }
  std::size_t num_windows() const { return lengths_.size(); }
  bool empty() const { return lengths_.empty(); }
  /// Non-padded id count of window `w` (between 1 and block_size + 1).
  std::size_t window_length(std::size_t w) const { return lengths_.at(w); }
  std::span<const TokenId> window(std::size_t w) const;
  /// Positions contributing to the loss, summed over windows: every target
  /// inside the window length that is not the pad id.
  std::size_t num_target_tokens() const;

  void append_window(std::span<const TokenId> ids);

  /// Gathers windows into a batch: inputs are ids [0, B), targets ids [1, B].
  Batch make_batch(std::span<const std::size_t> windows) const;

  /// Concatenation of all windows with padding dropped.
  std::vector<TokenId> dechunk() const;

  std::string serialize() const;
  static TokenDataset parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static TokenDataset load(const std::filesystem::path& path);

 private:
  std::size_t block_size_ = 0;
  TokenId pad_id_ = 0;
  std::vector<TokenId> raw_;  // num_windows x (block_size + 1), padded
  std::vector<std::size_t> lengths_;
};

/// Appends `eot` after each sequence, concatenates, and chunks.
TokenDataset pack_ids(std::span<const std::vector<TokenId>> sequences, const SpecialIds& specials,
                      std::size_t block_size);
TokenDataset pack(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t block_size);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

}  // namespace occlm
