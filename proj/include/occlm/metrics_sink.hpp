// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

namespace occlm {

struct MetricRecord {
  std::string run_id;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double perplexity = 0.0;
  double lr = 0.0;
  double occlusion_prob = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
  static MetricRecord from_json(const nlohmann::json& j);
  bool operator==(const MetricRecord&) const = default;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const MetricRecord& record) = 0;
  /// Blocks until every accepted record is durable.
  virtual void flush() {}
};

class MemorySink : public MetricsSink {
 public:
  void write(const MetricRecord& record) override;
  std::vector<MetricRecord> records() const;

 private:
  mutable std::mutex mu_;
  std::vector<MetricRecord> records_;
};

/// Appends JSON lines from a background writer thread. The queue is bounded;
/// producers block when it is full so no record is ever dropped.
class JsonlSink : public MetricsSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path, std::size_t capacity = 1024);
  ~JsonlSink() override;
  JsonlSink(const JsonlSink&) = delete;
  JsonlSink& operator=(const JsonlSink&) = delete;

  void write(const MetricRecord& record) override;
  void flush() override;

 private:
  void run();

  std::ofstream out_;
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::condition_variable drained_;
  std::deque<std::string> queue_;
  std::size_t in_flight_ = 0;
  bool closing_ = false;
  std::thread worker_;
};

/// Forwards each record to several sinks.
class TeeSink : public MetricsSink {
 public:
  explicit TeeSink(std::vector<MetricsSink*> sinks) : sinks_(std::move(sinks)) {}
  void write(const MetricRecord& record) override;
  void flush() override;

 private:
  std::vector<MetricsSink*> sinks_;
};

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

}  // namespace occlm
