// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "occlm/tensor.hpp"

namespace occlm {

/// Display names of the three reserved tokens.
struct SpecialNames {
  std::string pad = "<|pad|>";
  std::string occ = "<|occ|>";
  std::string eot = "<|endoftext|>";
};

struct SpecialIds {
  TokenId pad = 0;
  TokenId occ = 1;
  TokenId eot = 2;
};

struct Merge {
  TokenId left = 0;
  TokenId right = 0;
  TokenId result = 0;
  bool operator==(const Merge&) const = default;
};

struct EncodedText {
  std::vector<TokenId> ids;
  /// Byte span [first, second) of each token in the source string.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
};

/// Byte-level BPE vocabulary.
///
/// Id layout: the three specials first (pad, occ, eot), then the 256 raw
/// bytes, then tokens in merge-acquisition order. Encode/decode are const and
/// safe to call concurrently.
class Vocabulary {
 public:
  static constexpr std::size_t kByteAlphabet = 256;
  static constexpr std::size_t kNumSpecials = 3;
  static constexpr std::size_t kDefaultTargetSize = 50225;

  Vocabulary() = default;

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t target_size() const { return target_size_; }
  const SpecialIds& specials() const { return special_ids_; }
  const SpecialNames& special_names() const { return special_names_; }
  bool is_special(TokenId id) const;

  /// Raw bytes of a content token, or the display name of a special.
  const std::string& token(TokenId id) const;
  /// Id of a content token's raw bytes; -1 when absent.
  TokenId find(std::string_view bytes) const;
  TokenId byte_id(unsigned char b) const { return static_cast<TokenId>(kNumSpecials + b); }

  const std::vector<Merge>& merges() const { return merges_; }

  EncodedText encode_with_offsets(std::string_view text) const;
  std::vector<TokenId> encode(std::string_view text) const { return encode_with_offsets(text).ids; }
  /// Concatenates token bytes; specials render as their names unless skipped.
  std::string decode(std::span<const TokenId> ids, bool skip_specials = false) const;

  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  /// Fingerprint of the serialized form; checkpoints record it.
  std::string hash() const;

  const std::string& run_id() const { return run_id_; }
  void set_run_id(std::string id) { run_id_ = std::move(id); }

  friend Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size,
                              const SpecialNames& specials);

 private:
  void init_base(const SpecialNames& names, std::size_t target_size);
  TokenId add_token(std::string bytes);
  void add_merge(TokenId left, TokenId right, TokenId result);
  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::size_t> merge_rank_;  // packed (left, right) -> rank
  SpecialNames special_names_;
  SpecialIds special_ids_;
  std::size_t target_size_ = kDefaultTargetSize;
  std::string run_id_;
};

/// Unicode-aware lowercase. Throws EncodingError on malformed UTF-8.
std::string normalize(std::string_view text);

/// Splits text into pre-token chunks: an optional single leading space plus
/// a run of letters, digits, or other symbols. Merges never cross chunks.
std::vector<std::string_view> pretokenize(std::string_view text);

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair
/// (ties go to the lexicographically smaller byte pair) until the vocabulary
/// reaches `target_size` or no pair occurs at least twice.
Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size,
                     const SpecialNames& specials = {});

/// Reversible byte <-> printable code point mapping used by the vocab file.
std::string bytes_to_printable(std::string_view bytes);
std::string printable_to_bytes(std::string_view printable);

}  // namespace occlm
