// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "occlm/sweep.hpp"
#include "support.hpp"

namespace occlm {
namespace {

SweepSpec tiny_spec(std::size_t trials) {
  SweepSpec s;
  s.lr_min = 1e-3;
  s.lr_max = 1e-2;
  s.n_layers = {1, 2};
  s.n_heads = {2, 4};
  s.dropout = {0.0, 0.1};
  s.occlusion_prob = {0.0, 0.3};
  s.trial_count = trials;
  s.max_epochs = 3;
  s.seed = 11;
  s.base_model = testing::tiny_config(40, 32, 16, 1, 2);
  s.base_train.batch_size = 4;
  s.base_train.weight_decay = 0.0;
  return s;
}

struct SweepData {
  TokenDataset train = testing::memorization_dataset(6);
  TokenDataset valid = testing::memorization_dataset(2);
};

// Drops wall-clock fields so records can be compared across runs.
std::vector<TrialRecord> without_timing(std::vector<TrialRecord> records) {
  for (auto& r : records) {
    r.wall_ms = 0.0;
    for (auto& h : r.history) h.wall_ms = 0.0;
  }
  return records;
}

TEST(SampleTrial, DeterministicPerSeedAndIndex) {
  const SweepSpec s = tiny_spec(20);
  for (std::size_t i = 0; i < 20; ++i) {
    const TrialConfig a = sample_trial(s, i);
    const TrialConfig b = sample_trial(s, i);
    EXPECT_EQ(a.sampled, b.sampled);
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(a.train, b.train);
  }
  SweepSpec other = s;
  other.seed = 12;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < 20; ++i) differing += sample_trial(s, i).sampled != sample_trial(other, i).sampled;
  EXPECT_GT(differing, 15u);
  EXPECT_THROW(sample_trial(s, 20), ContractError);
}

TEST(SampleTrial, SingletonSpacesGiveTheSingleConfig) {
  SweepSpec s = tiny_spec(5);
  s.lr_min = s.lr_max = 3e-4;
  s.n_layers = {2};
  s.n_heads = {4};
  s.dropout = {0.2};
  s.occlusion_prob = {0.0};
  for (std::size_t i = 0; i < 5; ++i) {
    const TrialConfig t = sample_trial(s, i);
    EXPECT_EQ(t.train.base_lr, 3e-4);
    EXPECT_EQ(t.model.n_layers, 2u);
    EXPECT_EQ(t.model.n_heads, 4u);
    EXPECT_FLOAT_EQ(t.model.dropout, 0.2f);
    EXPECT_EQ(t.train.occlusion_prob, 0.0);
    EXPECT_EQ(t.train.max_epochs, 3u);
  }
}

TEST(SampleTrial, LearningRateIsLogUniform) {
  SweepSpec s = tiny_spec(1000);
  s.lr_min = 1e-5;
  s.lr_max = 1e-3;
  std::size_t low_decade = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const double lr = sample_trial(s, i).train.base_lr;
    ASSERT_GE(lr, 1e-5);
    ASSERT_LE(lr, 1e-3);
    low_decade += lr < 1e-4;
  }
  // Two decades, each with probability 1/2.
  const double sigma = std::sqrt(1000 * 0.25);
  EXPECT_LE(std::abs(static_cast<double>(low_decade) - 500.0), 3 * sigma);
}

TEST(SampleTrial, HeadsThatDoNotDivideAreResampled) {
  SweepSpec s = tiny_spec(50);
  s.n_heads = {3, 4};  // d_model 16: only 4 divides
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sample_trial(s, i).model.n_heads, 4u);
  s.n_heads = {3, 5};
  EXPECT_THROW(sample_trial(s, 0), ConfigError);
}

TEST(SweepSpecJson, RoundTripAndValidation) {
  const SweepSpec s = tiny_spec(6);
  EXPECT_EQ(SweepSpec::from_json(s.to_json()).to_json(), s.to_json());
  SweepSpec bad = s;
  bad.trial_count = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.lr_min = 1e-2;
  bad.lr_max = 1e-3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunSweep, SingleTrialIsTheBest) {
  const SweepData d;
  const SweepResult r = run_sweep(tiny_spec(1), d.train, d.valid, nullptr);
  ASSERT_EQ(r.leaderboard.size(), 1u);
  EXPECT_EQ(r.best, r.leaderboard[0]);
  EXPECT_TRUE(r.best_model.has_value());
}

TEST(RunSweep, LeaderboardIsSortedAndRecordsAreConsistent) {
  const SweepData d;
  MemorySink sink;
  const SweepResult r = run_sweep(tiny_spec(6), d.train, d.valid, &sink);
  ASSERT_EQ(r.leaderboard.size(), 6u);
  std::vector<double> losses;
  for (const auto& t : r.leaderboard) losses.push_back(t.best_valid_loss);
  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(losses, sorted);
  for (const auto& t : r.leaderboard) {
    double m = INFINITY;
    for (const auto& h : t.history) m = std::min(m, h.valid_loss);
    EXPECT_EQ(t.best_valid_loss, m) << "trial " << t.trial_id;
    EXPECT_TRUE(t.stop_reason == "early_stop" || t.stop_reason == "max_epochs" || t.stop_reason == "diverged");
  }
  EXPECT_EQ(r.best.trial_id, r.leaderboard.front().trial_id);
  EXPECT_FALSE(sink.records().empty());
}

TEST(RunSweep, DivergingTrialIsRecordedNotFatal) {
  const SweepData d;
  SweepOptions o;
  o.trial_hook = [](TrialConfig& t) {
    if (t.index == 1) {
      t.train.base_lr = 1e6;
      t.train.warmup_fraction = 0.0;
    }
  };
  const SweepResult r = run_sweep(tiny_spec(3), d.train, d.valid, nullptr, o);
  ASSERT_EQ(r.leaderboard.size(), 3u);
  const auto it = std::find_if(r.leaderboard.begin(), r.leaderboard.end(), [](const auto& t) { return t.trial_id == 1; });
  ASSERT_NE(it, r.leaderboard.end());
  EXPECT_EQ(it->stop_reason, "diverged");
  EXPECT_EQ(r.leaderboard.back().trial_id, 1u);
  EXPECT_NE(r.best.trial_id, 1u);
}

TEST(RunSweep, AllTrialsDivergingIsSweepError) {
  const SweepData d;
  SweepOptions o;
  o.trial_hook = [](TrialConfig& t) {
    t.train.base_lr = 1e6;
    t.train.warmup_fraction = 0.0;
  };
  EXPECT_THROW(run_sweep(tiny_spec(2), d.train, d.valid, nullptr, o), SweepError);
}

TEST(RunSweep, EmptyDataIsDataError) {
  const SweepData d;
  EXPECT_THROW(run_sweep(tiny_spec(1), TokenDataset(32, 0), d.valid, nullptr), DataError);
}

TEST(RunSweep, FullDeterminismAndParallelAgreement) {
  const SweepData d;
  const SweepResult a = run_sweep(tiny_spec(4), d.train, d.valid, nullptr);
  const SweepResult b = run_sweep(tiny_spec(4), d.train, d.valid, nullptr);
  SweepOptions par;
  par.parallel = 3;
  const SweepResult c = run_sweep(tiny_spec(4), d.train, d.valid, nullptr, par);
  EXPECT_EQ(without_timing(a.leaderboard), without_timing(b.leaderboard));
  EXPECT_EQ(without_timing(a.leaderboard), without_timing(c.leaderboard));
}

TEST(RunSweep, WritesLayoutAndResumesMissingTrials) {
  const SweepData d;
  testing::TempDir dir("sweep");
  SweepOptions o;
  o.out_dir = dir.path();
  o.run_id = "s1";
  const SweepResult first = run_sweep(tiny_spec(4), d.train, d.valid, nullptr, o);
  const auto root = dir.path() / "s1";
  for (const char* f : {"spec.json", "leaderboard.json", "report.json", "best_checkpoint.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(root / f)) << f;
  }
  for (int k = 0; k < 4; ++k) {
    const auto t = root / ("trial_" + std::to_string(k));
    for (const char* f : {"config.json", "metrics.jsonl", "checkpoint.bin", "record.json"}) {
      EXPECT_TRUE(std::filesystem::exists(t / f)) << t << "/" << f;
    }
  }

  // Simulate a crash that lost the last two trials.
  std::filesystem::remove_all(root / "trial_2");
  std::filesystem::remove(root / "trial_3" / "record.json");
  std::size_t ran = 0;
  o.trial_hook = [&](TrialConfig&) { ++ran; };
  const SweepResult resumed = run_sweep(tiny_spec(4), d.train, d.valid, nullptr, o);
  EXPECT_EQ(resumed.resumed, 2u);
  EXPECT_EQ(ran, 2u);
  EXPECT_EQ(without_timing(resumed.leaderboard), without_timing(first.leaderboard));
}

TEST(SweepReport, ColumnsRowsAndRoundTrip) {
  const SweepData d;
  const SweepResult r = run_sweep(tiny_spec(3), d.train, d.valid, nullptr);
  const nlohmann::json report = sweep_report(r.leaderboard);
  std::set<std::string> expected{"trial_id", "best_valid_loss", "best_valid_perplexity", "stop_reason", "epochs"};
  for (const auto& t : r.leaderboard) {
    for (const auto& [k, v] : t.sampled.items()) expected.insert(k);
  }
  std::set<std::string> columns;
  for (const auto& c : report.at("columns")) columns.insert(c.get<std::string>());
  EXPECT_EQ(columns, expected);
  EXPECT_EQ(report.at("rows").size(), 3u);
  EXPECT_EQ(report.at("curves").size(), 3u);
  EXPECT_EQ(parse_sweep_report(nlohmann::json::parse(report.dump())), r.leaderboard);

  const nlohmann::json single = sweep_report({r.leaderboard[0]});
  EXPECT_EQ(single.at("rows").size(), 1u);
}

}  // namespace
}  // namespace occlm
