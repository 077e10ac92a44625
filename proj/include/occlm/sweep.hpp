// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "occlm/corpus.hpp"
#include "occlm/errors.hpp"
#include "occlm/metrics_sink.hpp"
#include "occlm/model.hpp"
#include "occlm/train.hpp"

namespace occlm {

class SweepError : public Error {
 public:
  using Error::Error;
};

/// Random-search space. Choice sets are sampled uniformly; the learning rate
/// log-uniformly in [lr_min, lr_max].
struct SweepSpec {
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  std::vector<std::size_t> n_layers{6, 8};
  std::vector<std::size_t> n_heads{4, 8};
  /// Empty means "keep base_model.d_model".
  std::vector<std::size_t> d_model;
  std::vector<double> dropout{0.1, 0.2, 0.3};
  /// {0} for the standard objective.
  std::vector<double> occlusion_prob{0.1, 0.3, 0.5};
  std::size_t trial_count = 20;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  std::size_t max_resamples = 64;
  ModelConfig base_model;
  TrainConfig base_train;

  void validate() const;
  nlohmann::json to_json() const;
  static SweepSpec from_json(const nlohmann::json& j);
};

struct TrialConfig {
  std::size_t index = 0;
  ModelConfig model;
  TrainConfig train;
  /// Sampled parameter name -> value.
  nlohmann::json sampled = nlohmann::json::object();
};

/// Deterministic in (spec.seed, index). Head/width combinations that do not
/// divide are resampled up to spec.max_resamples times.
TrialConfig sample_trial(const SweepSpec& spec, std::size_t index);

struct TrialRecord {
  std::size_t trial_id = 0;
  nlohmann::json sampled = nlohmann::json::object();
  ModelConfig model;
  TrainConfig train;
  std::vector<EpochRecord> history;
  double best_valid_loss = 0.0;
  double best_valid_perplexity = 0.0;
  std::string stop_reason;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
  static TrialRecord from_json(const nlohmann::json& j);
  bool operator==(const TrialRecord&) const;
};

struct SweepOptions {
  /// Sweep root; results go to out_dir/run_id. Empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::string run_id;
  std::string vocab_hash;
  SpecialIds specials;
  std::size_t parallel = 1;
  /// Adjusts a sampled trial before it runs (fault injection, overrides).
  std::function<void(TrialConfig&)> trial_hook;
};

struct SweepResult {
  std::vector<TrialRecord> leaderboard;  // ascending best validation loss
  TrialRecord best;
  std::optional<GptModel> best_model;
  std::size_t resumed = 0;
};

/// Runs every trial not already recorded under the output directory.
SweepResult run_sweep(const SweepSpec& spec, const TokenDataset& train, const TokenDataset& valid, MetricsSink* sink,
                      const SweepOptions& options = {});

/// Table of per-trial sampled parameters and scores plus per-epoch curves.
nlohmann::json sweep_report(const std::vector<TrialRecord>& records);
std::vector<TrialRecord> parse_sweep_report(const nlohmann::json& report);

std::string default_sweep_run_id(const SweepSpec& spec);

}  // namespace occlm
