// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "occlm/errors.hpp"
#include "occlm/rng.hpp"

namespace occlm {

PerplexityResult perplexity(const GptModel& model, const TokenDataset& data, std::size_t batch_size) {
  if (data.empty() || data.num_target_tokens() == 0) throw DataError("perplexity over an empty dataset");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  NoGradGuard no_grad;
  const std::size_t V = model.config().vocab_size;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.num_windows(); start += batch_size) {
    idx.clear();
    for (std::size_t w = start; w < std::min(start + batch_size, data.num_windows()); ++w) idx.push_back(w);
    const Batch batch = data.make_batch(idx);
    const Tensor logits = model.forward(batch.inputs);
    const auto values = logits.data();
    for (std::size_t i = 0; i < batch.targets.size(); ++i) {
      if (batch.ignore[i]) continue;
      const auto row = log_softmax_row(values.subspan(i * V, V));
      total -= row[static_cast<std::size_t>(batch.targets[i])];
      ++count;
    }
  }
  PerplexityResult r;
  r.mean_loss = total / static_cast<double>(count);
  r.perplexity = std::exp(r.mean_loss);
  r.n_tokens = count;
  r.n_sequences = data.num_windows();
  return r;
}

// ---- BLEU ------------------------------------------------------------------

double brevity_penalty(std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts count_ngrams(const std::vector<TokenId>& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<TokenId>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                  seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuStats bleu_corpus_stats(std::span<const std::vector<TokenId>> candidates,
                            std::span<const std::vector<TokenId>> references, const BleuOptions& options) {
  if (candidates.size() != references.size()) {
    throw ContractError("bleu_corpus: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ContractError("bleu_corpus needs at least one candidate/reference pair");
  if (options.max_n == 0) throw ConfigError("bleu max_n must be positive");

  BleuStats s;
  s.matches.assign(options.max_n, 0);
  s.totals.assign(options.max_n, 0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    s.candidate_length += candidates[i].size();
    s.reference_length += references[i].size();
    for (std::size_t n = 1; n <= options.max_n; ++n) {
      const NgramCounts cand = count_ngrams(candidates[i], n);
      const NgramCounts ref = count_ngrams(references[i], n);
      for (const auto& [gram, c] : cand) {
        const auto it = ref.find(gram);
        s.matches[n - 1] += std::min(c, it == ref.end() ? std::size_t{0} : it->second);
        s.totals[n - 1] += c;
      }
    }
  }
  s.brevity_penalty = brevity_penalty(s.candidate_length, s.reference_length);
  s.precisions.assign(options.max_n, 0.0);

  double log_sum = 0.0;
  std::size_t orders = 0;
  bool zero = s.candidate_length == 0;
  for (std::size_t n = 0; n < options.max_n && !zero; ++n) {
    if (s.totals[n] == 0) continue;
    double p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    if (s.matches[n] == 0) {
      if (options.smoothing_epsilon > 0.0) {
        p = options.smoothing_epsilon / static_cast<double>(s.totals[n]);
      } else {
        zero = true;
      }
    }
    s.precisions[n] = p;
    if (!zero) {
      log_sum += std::log(p);
      ++orders;
    }
  }
  s.score = (zero || orders == 0) ? 0.0 : s.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return s;
}

double bleu_corpus(std::span<const std::vector<TokenId>> candidates, std::span<const std::vector<TokenId>> references,
                   const BleuOptions& options) {
  return bleu_corpus_stats(candidates, references, options).score;
}

// ---- generation --------------------------------------------------------------

std::string strategy_name(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::kGreedy:
      return "greedy";
    case DecodeStrategy::kSample:
      return "sample";
    case DecodeStrategy::kTopK:
      return "topk";
  }
  return "greedy";
}

DecodeStrategy parse_strategy(std::string_view name) {
  if (name == "greedy") return DecodeStrategy::kGreedy;
  if (name == "sample") return DecodeStrategy::kSample;
  if (name == "topk") return DecodeStrategy::kTopK;
  throw ConfigError("unknown decoding strategy '" + std::string(name) + "' (expected greedy, sample or topk)");
}

void GenerationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (strategy == DecodeStrategy::kTopK && top_k < 1) throw ConfigError("top_k >= 1 required");
}

nlohmann::json GenerationConfig::to_json() const {
  return {{"max_new_tokens", max_new_tokens}, {"strategy", strategy_name(strategy)},
          {"temperature", temperature},       {"top_k", top_k},
          {"stop_on_eot", stop_on_eot},       {"seed", seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
  GenerationConfig g;
  g.max_new_tokens = j.at("max_new_tokens").get<std::size_t>();
  g.strategy = parse_strategy(j.at("strategy").get<std::string>());
  g.temperature = j.at("temperature").get<double>();
  g.top_k = j.at("top_k").get<std::size_t>();
  g.stop_on_eot = j.at("stop_on_eot").get<bool>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

namespace {

TokenId argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

// Samples from softmax(row[candidates] / temperature).
TokenId sample_from(std::span<const float> row, const std::vector<std::size_t>& candidates, double temperature,
                    Rng& rng) {
  double mx = -INFINITY;
  for (std::size_t i : candidates) mx = std::max(mx, row[i] / temperature);
  std::vector<double> weights(candidates.size());
  double z = 0.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    weights[j] = std::exp(row[candidates[j]] / temperature - mx);
    z += weights[j];
  }
  const double u = rng.uniform() * z;
  double acc = 0.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    acc += weights[j];
    if (u < acc) return static_cast<TokenId>(candidates[j]);
  }
  // Rounding can leave u at the top of the range; fall back to the last
  // candidate with nonzero weight.
  for (std::size_t j = candidates.size(); j-- > 0;) {
    if (weights[j] > 0.0) return static_cast<TokenId>(candidates[j]);
  }
  return static_cast<TokenId>(candidates.front());
}

}  // namespace

std::vector<TokenId> generate(const GptModel& model, std::span<const TokenId> prompt, const GenerationConfig& gen,
                              TokenId eot_id) {
  gen.validate();
  const std::size_t block = model.config().block_size;
  if (prompt.empty()) throw LengthError("generation prompt is empty");
  if (prompt.size() >= block) {
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens does not fit block_size " +
                      std::to_string(block));
  }
  NoGradGuard no_grad;
  Rng rng(gen.seed);
  const std::size_t V = model.config().vocab_size;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  std::vector<std::size_t> all(V);
  std::iota(all.begin(), all.end(), std::size_t{0});
  while (out.size() < gen.max_new_tokens) {
    const std::size_t start = context.size() > block ? context.size() - block : 0;
    const std::size_t T = context.size() - start;
    const Tensor logits =
        model.forward(TokenGrid(1, T, std::vector<TokenId>(context.begin() + static_cast<std::ptrdiff_t>(start),
                                                           context.end())));
    const auto row = logits.data().subspan((T - 1) * V, V);
    TokenId next = 0;
    switch (gen.strategy) {
      case DecodeStrategy::kGreedy:
        next = argmax(row);
        break;
      case DecodeStrategy::kSample:
        next = sample_from(row, all, gen.temperature, rng);
        break;
      case DecodeStrategy::kTopK: {
        std::vector<std::size_t> order = all;
        const std::size_t k = std::min(gen.top_k, V);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        order.resize(k);
        next = k == 1 ? static_cast<TokenId>(order.front()) : sample_from(row, order, gen.temperature, rng);
        break;
      }
    }
    if (gen.stop_on_eot && next == eot_id) break;
    out.push_back(next);
    context.push_back(next);
  }
  return out;
}

// ---- BLEU protocol -------------------------------------------------------------

std::string ProtocolResult::transcript_text() const {
  std::string out;
  for (const auto& p : transcript) out += "REF:\t" + p.reference + "\nGEN:\t" + p.generated + "\n";
  return out;
}

namespace {

ProtocolResult run_protocol(const GptModel& model, std::span<const std::vector<TokenId>> sentences,
                            double prompt_frac, const GenerationConfig& gen, TokenId eot_id, const BleuOptions& bleu,
                            const Vocabulary* vocab) {
  if (!(prompt_frac > 0.0 && prompt_frac < 1.0)) throw ConfigError("prompt_frac must lie in (0, 1)");
  ProtocolResult result;
  for (const auto& ids : sentences) {
    const std::size_t n = ids.size();
    const auto k = static_cast<std::size_t>(std::ceil(prompt_frac * static_cast<double>(n)));
    if (k == 0 || k >= n || k >= model.config().block_size) {
      ++result.n_skipped;
      continue;
    }
    GenerationConfig g = gen;
    g.max_new_tokens = n - k;
    std::vector<TokenId> cand = generate(model, std::span(ids).first(k), g, eot_id);
    std::vector<TokenId> ref(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
    if (vocab != nullptr) result.transcript.push_back({vocab->decode(ref), vocab->decode(cand)});
    result.candidates.push_back(std::move(cand));
    result.references.push_back(std::move(ref));
  }
  result.n_scored = result.candidates.size();
  if (result.n_scored == 0) throw DataError("no sentence long enough for the BLEU protocol");
  result.bleu = bleu_corpus(result.candidates, result.references, bleu);
  return result;
}

}  // namespace

ProtocolResult bleu_eval_protocol(const GptModel& model, std::span<const std::vector<TokenId>> sentences,
                                  double prompt_frac, const GenerationConfig& gen, TokenId eot_id,
                                  const BleuOptions& bleu) {
  return run_protocol(model, sentences, prompt_frac, gen, eot_id, bleu, nullptr);
}

ProtocolResult bleu_eval_protocol(const GptModel& model, const Vocabulary& vocab,
                                  std::span<const std::string> sentences, double prompt_frac,
                                  const GenerationConfig& gen, const BleuOptions& bleu) {
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(sentences.size());
  for (const auto& s : sentences) encoded.push_back(vocab.encode(s));
  return run_protocol(model, encoded, prompt_frac, gen, vocab.specials().eot, bleu, &vocab);
}

// ---- report ------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"split", split},
                      {"mean_loss", mean_loss},
                      {"perplexity", perplexity},
                      {"bleu", bleu ? nlohmann::json(*bleu) : nlohmann::json(nullptr)},
                      {"n_sequences", n_sequences},
                      {"n_tokens", n_tokens},
                      {"generation", generation ? generation->to_json() : nlohmann::json(nullptr)},
                      {"prompt_frac", prompt_frac ? nlohmann::json(*prompt_frac) : nlohmann::json(nullptr)},
                      {"bleu_skipped", bleu_skipped},
                      {"run_id", run_id},
                      {"checkpoint_hash", checkpoint_hash}};
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = j.at("split").get<std::string>();
  r.mean_loss = j.at("mean_loss").get<double>();
  r.perplexity = j.at("perplexity").get<double>();
  if (!j.at("bleu").is_null()) r.bleu = j.at("bleu").get<double>();
  r.n_sequences = j.at("n_sequences").get<std::size_t>();
  r.n_tokens = j.at("n_tokens").get<std::size_t>();
  if (!j.at("generation").is_null()) r.generation = GenerationConfig::from_json(j.at("generation"));
  if (!j.at("prompt_frac").is_null()) r.prompt_frac = j.at("prompt_frac").get<double>();
  r.bleu_skipped = j.at("bleu_skipped").get<std::size_t>();
  r.run_id = j.at("run_id").get<std::string>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  return r;
}

EvalOutput evaluate(const Checkpoint& ckpt, std::string_view checkpoint_hash, const Vocabulary& vocab,
                    const TokenDataset& data, const EvalOptions& options) {
  if (ckpt.vocab_hash != vocab.hash()) {
    throw CheckpointError("checkpoint was trained with vocabulary " + ckpt.vocab_hash + " but vocabulary " +
                          vocab.hash() + " was supplied");
  }
  if (ckpt.model.config().vocab_size < vocab.size()) {
    throw CheckpointError("checkpoint vocab_size is smaller than the vocabulary");
  }
  EvalOutput out;
  EvalReport& r = out.report;
  const PerplexityResult ppl = perplexity(ckpt.model, data, options.batch_size);
  r.split = options.split_name;
  r.mean_loss = ppl.mean_loss;
  r.perplexity = std::exp(r.mean_loss);
  r.n_sequences = ppl.n_sequences;
  r.n_tokens = ppl.n_tokens;
  r.run_id = ckpt.run_id;
  r.checkpoint_hash = std::string(checkpoint_hash);
  if (options.generation) {
    out.protocol = bleu_eval_protocol(ckpt.model, vocab, options.bleu_sentences, options.prompt_frac,
                                      *options.generation, options.bleu);
    r.bleu = out.protocol->bleu;
    r.bleu_skipped = out.protocol->n_skipped;
    r.generation = options.generation;
    r.prompt_frac = options.prompt_frac;
  }
  return out;
}

}  // namespace occlm
