// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "occlm/bpe.hpp"
#include "occlm/checkpoint.hpp"
#include "occlm/corpus.hpp"
#include "occlm/model.hpp"

namespace occlm {

struct PerplexityResult {
  double mean_loss = 0.0;
  double perplexity = 0.0;
  std::size_t n_tokens = 0;
  std::size_t n_sequences = 0;
};

/// Token-level mean negative log-likelihood over every non-pad target
/// position of `data`, accumulated in double. PPL is exp of that mean.
PerplexityResult perplexity(const GptModel& model, const TokenDataset& data, std::size_t batch_size = 16);

struct BleuOptions {
  std::size_t max_n = 4;
  /// When positive, an order with zero clipped matches scores eps / total
  /// instead of zeroing the whole BLEU.
  double smoothing_epsilon = 0.0;
};

struct BleuStats {
  double score = 0.0;
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  std::vector<std::size_t> matches;  // per order 1..max_n
  std::vector<std::size_t> totals;
  std::vector<double> precisions;
};

/// Brevity penalty: 1 when c > r, else exp(1 - r/c); 0 when c == 0.
double brevity_penalty(std::size_t candidate_length, std::size_t reference_length);

/// Corpus BLEU over token ids with clipped n-gram counts summed across the
/// corpus. Orders for which the corpus has no candidate n-grams at all are
/// left out of the geometric mean.
BleuStats bleu_corpus_stats(std::span<const std::vector<TokenId>> candidates,
                            std::span<const std::vector<TokenId>> references, const BleuOptions& options = {});
double bleu_corpus(std::span<const std::vector<TokenId>> candidates, std::span<const std::vector<TokenId>> references,
                   const BleuOptions& options = {});

enum class DecodeStrategy { kGreedy, kSample, kTopK };

struct GenerationConfig {
  std::size_t max_new_tokens = 32;
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  double temperature = 1.0;
  std::size_t top_k = 40;
  bool stop_on_eot = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
};

std::string strategy_name(DecodeStrategy s);
DecodeStrategy parse_strategy(std::string_view name);

/// Autoregressive continuation of `prompt`; the prompt itself is not
/// returned. The context keeps only the last block_size tokens.
std::vector<TokenId> generate(const GptModel& model, std::span<const TokenId> prompt, const GenerationConfig& gen,
                              TokenId eot_id);

struct TranscriptPair {
  std::string reference;
  std::string generated;
};

struct ProtocolResult {
  double bleu = 0.0;
  std::size_t n_scored = 0;
  std::size_t n_skipped = 0;
  std::vector<std::vector<TokenId>> candidates;
  std::vector<std::vector<TokenId>> references;
  std::vector<TranscriptPair> transcript;

  std::string transcript_text() const;
};

/// Prompts with the leading ceil(prompt_frac * n) tokens of each sentence,
/// generates n - k tokens, and scores continuations against the true ones.
/// Sentences whose prompt would be empty, the whole sentence, or not fit in
/// the context are skipped.
ProtocolResult bleu_eval_protocol(const GptModel& model, std::span<const std::vector<TokenId>> sentences,
                                  double prompt_frac, const GenerationConfig& gen, TokenId eot_id,
                                  const BleuOptions& bleu = {});
ProtocolResult bleu_eval_protocol(const GptModel& model, const Vocabulary& vocab,
                                  std::span<const std::string> sentences, double prompt_frac,
                                  const GenerationConfig& gen, const BleuOptions& bleu = {});

struct EvalReport {
  std::string split;
  double mean_loss = 0.0;
  double perplexity = 0.0;
  std::optional<double> bleu;
  std::size_t n_sequences = 0;
  std::size_t n_tokens = 0;
  std::optional<GenerationConfig> generation;
  std::optional<double> prompt_frac;
  std::size_t bleu_skipped = 0;
  std::string run_id;
  std::string checkpoint_hash;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  std::string split_name = "validation";
  std::size_t batch_size = 16;
  /// BLEU is computed when generation settings and sentences are supplied.
  std::optional<GenerationConfig> generation;
  std::span<const std::string> bleu_sentences;
  double prompt_frac = 0.25;
  BleuOptions bleu;
};

struct EvalOutput {
  EvalReport report;
  std::optional<ProtocolResult> protocol;
};

/// Rejects a checkpoint whose vocab hash differs from `vocab`.
EvalOutput evaluate(const Checkpoint& ckpt, std::string_view checkpoint_hash, const Vocabulary& vocab,
                    const TokenDataset& data, const EvalOptions& options);

}  // namespace occlm
