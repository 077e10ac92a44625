// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/metrics_sink.hpp"

#include "occlm/errors.hpp"

namespace occlm {

nlohmann::json MetricRecord::to_json() const {
  return {{"run_id", run_id}, {"epoch", epoch}, {"step", step},
          {"split", split},   {"loss", loss},   {"perplexity", perplexity},
          {"lr", lr},         {"occlusion_prob", occlusion_prob}, {"wall_ms", wall_ms}};
}

MetricRecord MetricRecord::from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.step = j.at("step").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  r.loss = j.at("loss").get<double>();
  r.perplexity = j.at("perplexity").get<double>();
  r.lr = j.at("lr").get<double>();
  r.occlusion_prob = j.at("occlusion_prob").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

void MemorySink::write(const MetricRecord& record) {
  std::lock_guard lock(mu_);
  records_.push_back(record);
}

std::vector<MetricRecord> MemorySink::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

JsonlSink::JsonlSink(const std::filesystem::path& path, std::size_t capacity)
    : capacity_(capacity == 0 ? 1 : capacity) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open metrics file " + path.string());
  worker_ = std::thread([this] { run(); });
}

JsonlSink::~JsonlSink() {
  {
    std::lock_guard lock(mu_);
    closing_ = true;
  }
  not_empty_.notify_all();
  worker_.join();
}

void JsonlSink::write(const MetricRecord& record) {
  std::string line = record.to_json().dump();
  std::unique_lock lock(mu_);
  not_full_.wait(lock, [this] { return queue_.size() < capacity_; });
  queue_.push_back(std::move(line));
  lock.unlock();
  not_empty_.notify_one();
}

void JsonlSink::flush() {
  std::unique_lock lock(mu_);
  drained_.wait(lock, [this] { return queue_.empty() && in_flight_ == 0; });
}

void JsonlSink::run() {
  std::unique_lock lock(mu_);
  for (;;) {
    not_empty_.wait(lock, [this] { return closing_ || !queue_.empty(); });
    if (queue_.empty()) break;
    std::string line = std::move(queue_.front());
    queue_.pop_front();
    ++in_flight_;
    lock.unlock();
    not_full_.notify_one();
    out_ << line << '\n';
    out_.flush();
    lock.lock();
    --in_flight_;
    if (queue_.empty()) drained_.notify_all();
  }
}

void TeeSink::write(const MetricRecord& record) {
  for (auto* s : sinks_) s->write(record);
}

void TeeSink::flush() {
  for (auto* s : sinks_) s->flush();
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed metrics line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace occlm
