// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "occlm/bpe.hpp"
#include "occlm/checkpoint.hpp"
#include "occlm/corpus.hpp"
#include "occlm/errors.hpp"
#include "occlm/metrics_sink.hpp"
#include "occlm/model.hpp"
#include "occlm/rng.hpp"

namespace occlm {

struct TrainConfig {
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  double base_lr = 2e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 1e-2;
  std::size_t patience = 5;
  /// 0 disables occlusion.
  double occlusion_prob = 0.0;
  /// Loss weight of targets that were occluded in the input; 1 is uniform.
  double occlusion_loss_weight = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;
  std::size_t unfreeze_top_k = 2;
  std::size_t unfreeze_interval_epochs = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Overrides fields present in `j`; unknown keys are a ConfigError.
void merge_train_config(TrainConfig& config, const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps completed at epoch end
  double train_loss = 0.0;
  double train_perplexity = 0.0;
  double valid_loss = 0.0;
  double valid_perplexity = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

nlohmann::json epoch_record_to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;  // completed epochs
  /// AdamW moments and per-parameter step counts, aligned with the model's
  /// parameter order. A parameter's count advances only when it is updated.
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
  std::vector<std::size_t> adam_t;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  std::size_t epochs_over_threshold = 0;
  FreezeMask freeze;
  Rng rng;
  std::vector<EpochRecord> history;
  std::string stop_reason;

  static TrainState init(const GptModel& model, std::uint64_t seed);
};

/// Non-finite loss (or a loss that stays above the divergence threshold).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step, double lr, std::size_t batch_index)
      : Error(what), step(step), lr(lr), batch_index(batch_index) {}
  std::size_t step;
  double lr;
  std::size_t batch_index;
  std::vector<EpochRecord> history;
};

struct OcclusionResult {
  TokenGrid inputs;
  std::vector<std::uint8_t> flags;
  std::size_t eligible = 0;
  std::size_t occluded = 0;
};

/// Replaces each non-special input position by the occlusion id with
/// probability p. Targets are not an argument and never change.
OcclusionResult occlude_batch(const TokenGrid& inputs, double p, const SpecialIds& specials, Rng& rng);

/// Linear warmup from 0 to base_lr over warmup_fraction * total_steps, then
/// linear decay to 0 at total_steps.
double lr_at(double step, std::size_t total_steps, const TrainConfig& config);

/// One AdamW update of every trainable parameter that holds a gradient.
/// Decoupled weight decay applies to rank >= 2 tensors only.
void adamw_update(ParameterSet& params, TrainState& state, const TrainConfig& config, double lr);

struct StepResult {
  double loss = 0.0;
  std::size_t occluded = 0;
};

/// Forward (with occlusion when enabled), loss, backward, AdamW. Increments
/// state.step. Throws DivergenceError on a non-finite loss or gradient.
StepResult train_step(GptModel& model, TrainState& state, const Batch& batch, const TrainConfig& config,
                      const SpecialIds& specials, double lr, std::size_t batch_index = 0);

/// Trainable layers at `epoch` (0-based) when fine-tuning: the top k blocks
/// plus the head, one more block every `interval` epochs, and the
/// embeddings once every block is trainable.
FreezeMask unfreeze_schedule(std::size_t n_layers, std::size_t top_k, std::size_t interval, std::size_t epoch);

struct FitOptions {
  std::string run_id;
  SpecialIds specials;
  std::size_t eval_batch_size = 16;
  /// Replaces the computed validation loss (scripted early-stopping harness).
  std::function<double(std::size_t epoch, double computed)> validation_override;
  std::function<void(const GptModel&, const TrainState&)> on_epoch_end;
  /// When set, applied at the start of every epoch.
  std::function<FreezeMask(std::size_t epoch)> freeze_schedule;
  double divergence_threshold = 20.0;
  std::size_t divergence_epochs = 3;
  /// Resume from a state saved at an epoch boundary, with its best model.
  std::optional<TrainState> resume_state;
  std::optional<GptModel> resume_best;
};

struct FitResult {
  GptModel best;
  TrainState state;
};

/// Epoch loop with validation, early stopping on strict improvement, and
/// best-model retention. `model` holds the last weights afterwards.
FitResult fit(GptModel& model, const TokenDataset& train, const TokenDataset& valid, const TrainConfig& config,
              MetricsSink* sink, FitOptions options = {});

/// Fit under the gradual-unfreezing schedule of `config`.
FitResult finetune(GptModel& model, const TokenDataset& train, const TokenDataset& valid, const TrainConfig& config,
                   MetricsSink* sink, FitOptions options = {});
/// Verifies the checkpoint against the expected config and vocab first.
FitResult finetune(const Checkpoint& pretrained, const ModelConfig& expected_config,
                   std::string_view expected_vocab_hash, const TokenDataset& train, const TokenDataset& valid,
                   const TrainConfig& config, MetricsSink* sink, FitOptions options = {});

nlohmann::json train_state_to_json(const TrainState& state);
/// Moments are stored as extra tensors "adam.m.<param>" / "adam.v.<param>".
Checkpoint make_checkpoint(const GptModel& model, const TrainState* state, std::string vocab_hash, std::string run_id,
                           nlohmann::json metadata = nlohmann::json::object());
/// Rebuilds the training state stored in `ckpt`; throws CheckpointError if absent.
TrainState restore_train_state(const Checkpoint& ckpt);

}  // namespace occlm
