// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "occlm/rng.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

/// Decoder-only transformer hyperparameters.
struct ModelConfig {
  std::size_t vocab_size = 50225;
  std::size_t block_size = 128;
  std::size_t d_model = 256;
  std::size_t n_layers = 6;
  std::size_t n_heads = 4;
  float dropout = 0.3f;
  std::size_t ffn_mult = 4;
  bool tie_embeddings = true;
  Activation activation = Activation::kGelu;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  /// Closed-form learnable scalar count (tied head counted once).
  std::size_t parameter_count() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, uniquely named learnable tensors.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  /// Deep copy; requires_grad flags are preserved.
  ParameterSet clone() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
};

/// Coarse layer grouping used by gradual unfreezing.
struct LayerGroup {
  enum Kind { kEmbeddings, kBlock, kHead } kind = kEmbeddings;
  std::size_t block = 0;
};

LayerGroup layer_group_of(std::string_view param_name);

/// Per-layer trainable flags. With tied embeddings the shared token matrix
/// belongs to the embeddings group; the head group is then the final norm.
struct FreezeMask {
  bool embeddings = true;
  std::vector<bool> blocks;
  bool head = true;

  static FreezeMask all_trainable(std::size_t n_layers);
  bool any_trainable() const;
  bool trainable(std::string_view param_name) const;
  bool operator==(const FreezeMask&) const = default;
};

class GptModel {
 public:
  GptModel() = default;
  /// Validates that `params` has exactly the names and shapes `config` induces.
  GptModel(ModelConfig config, ParameterSet params);

  /// N(0, 0.02) weights, zero biases, unit layer-norm scales.
  static GptModel init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  /// Output projection [V, d]; the token embedding itself when tied.
  const Tensor& head_weight() const;

  /// Logits [B, T, V]. Position t depends only on ids[.., 0..t]. `rng` is
  /// required when training with dropout > 0.
  Tensor forward(const TokenGrid& ids, bool train = false, Rng* rng = nullptr) const;

  /// Sum over t >= 1 of log P(ids[t] | ids[<t]) in natural log units.
  double sequence_logprob(std::span<const TokenId> ids) const;

  /// Sets requires_grad on every parameter according to `mask`.
  void apply_freeze(const FreezeMask& mask);

  GptModel clone() const { return GptModel(config_, params_.clone()); }

 private:
  Tensor linear(const Tensor& x, const std::string& prefix) const;

  ModelConfig config_;
  ParameterSet params_;
};

/// Expected parameter names and shapes for `config`, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

/// Log-probabilities (natural log) of the last axis, computed in double.
std::vector<double> log_softmax_row(std::span<const float> logits);

}  // namespace occlm
